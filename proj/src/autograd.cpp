#include "freehead/autograd.hpp"

#include <sstream>
#include <unordered_set>

namespace freehead {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (int d : shape) n *= d;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) throw ShapeError("backward() without gradient needs a scalar, got " + shape_str(shape()));
  backward(Tensor<T>(node_->value.shape(), T(1)));
}

template <typename T>
void Var<T>::backward(const Tensor<T>& grad_out) const {
  if (grad_out.shape() != node_->value.shape()) throw ShapeError("backward gradient shape mismatch");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  // Strong references: clearing a node's edges must not free nodes still queued.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      std::shared_ptr<Node<T>> child = n->inputs[next++];
      if (child && child->requires_grad && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(n));
      stack.pop_back();
    }
  }

  node_->accumulate(grad_out);
  NoGradGuard guard;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->is_leaf()) continue;
    if (!n->grad.empty()) n->backward(n->grad, *n);
    // Interior gradients and edges are single-use.
    n->grad = Tensor<T>();
    n->backward = nullptr;
    n->inputs.clear();
  }
}

template class Var<float>;
template class Var<double>;

}  // namespace freehead
