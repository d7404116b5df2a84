#pragma once

#include "freehead/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace freehead {

// Reverse-mode automatic differentiation over Tensor values. A Var is a cheap
// handle to a graph node; ops build the graph when gradient recording is on
// and at least one input requires a gradient.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor<T>& grad_out, Node& self)> backward;

  bool is_leaf() const { return !backward; }

  // Adds g into this node's gradient, allocating on first use.
  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad.array() += g.array();
    }
  }
  template <typename Expr>
  void accumulate_array(const Expr& g) {
    if (grad.empty()) {
      grad = Tensor<T>(value.shape(), typename Tensor<T>::Array(g));
    } else {
      grad.array() += g;
    }
  }
  // Returns a zero-initialized gradient buffer for scatter-style accumulation.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

bool grad_enabled();

/// Disables graph recording within its scope (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return bool(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  int ndim() const { return node_->value.ndim(); }
  T item() const { return node_->value.item(); }

  Var detach() const { return Var(node_->value, false); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Backpropagates from this scalar; gradients accumulate into leaves.
  void backward() const;
  /// Backpropagates with an explicit output gradient of matching shape.
  void backward(const Tensor<T>& grad_out) const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates a result node; records the graph edge only when needed.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(const Tensor<T>&, Node<T>&)> backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

// True when input i of a recorded node wants a gradient.
template <typename T>
inline bool wants_grad(const Node<T>& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

extern template class Var<float>;
extern template class Var<double>;

}  // namespace freehead
