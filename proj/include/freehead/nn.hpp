#pragma once

#include "freehead/ops.hpp"

#include <Eigen/QR>

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace freehead {

enum class Init { Kaiming, Orthogonal, Normal002, Zero };

// Fills an (out, fan_in) weight according to the scheme.
template <typename T>
Tensor<T> init_weight(Shape shape, int fan_in, Init scheme, std::mt19937_64& rng) {
  Tensor<T> w(shape);
  const int out = shape[0];
  switch (scheme) {
    case Init::Zero:
      break;
    case Init::Normal002:
      w = Tensor<T>::randn(shape, rng, T(0.02));
      break;
    case Init::Kaiming:
      w = Tensor<T>::randn(shape, rng, T(std::sqrt(2.0 / fan_in)));
      break;
    case Init::Orthogonal: {
      // Rows (or columns when out > fan_in) orthonormal; gain 1.
      const int rows = std::max(out, fan_in), cols = std::min(out, fan_in);
      Eigen::MatrixXd a(rows, cols);
      std::normal_distribution<double> nd(0.0, 1.0);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) a(i, j) = nd(rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
      const Eigen::VectorXd diag = qr.matrixQR().diagonal();
      for (int j = 0; j < cols; ++j)
        if (diag(j) < 0) q.col(j) = -q.col(j);
      for (int o = 0; o < out; ++o)
        for (int i = 0; i < fan_in; ++i) w[Index(o) * fan_in + i] = T(out >= fan_in ? q(o, i) : q(i, o));
      break;
    }
  }
  return w;
}

/// Owns named parameters, buffers and child modules. Non-copyable so that
/// registered addresses stay valid.
template <typename T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  std::vector<std::pair<std::string, Var<T>>> named_parameters(const std::string& prefix = "") const {
    std::vector<std::pair<std::string, Var<T>>> out;
    for (const auto& [n, p] : params_) out.emplace_back(prefix + n, p);
    for (const auto& [n, c] : children_) {
      auto sub = c->named_parameters(prefix + n + ".");
      out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers(const std::string& prefix = "") {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& [n, b] : buffers_) out.emplace_back(prefix + n, b);
    for (auto& [n, c] : children_) {
      auto sub = c->named_buffers(prefix + n + ".");
      out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    for (auto& [n, p] : named_parameters()) out.push_back(p);
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for (auto& [name, p] : named_parameters()) n += p.value().size();
    return n;
  }

  void train(bool on = true) {
    training_ = on;
    for (auto& [n, c] : children_) c->train(on);
  }
  void eval() { train(false); }
  bool is_training() const { return training_; }

  void set_requires_grad(bool on) {
    for (auto& [n, p] : named_parameters()) p.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& [n, p] : named_parameters()) p.zero_grad();
  }

 protected:
  Var<T> register_param(std::string name, Tensor<T> init) {
    Var<T> v(std::move(init), true);
    params_.emplace_back(std::move(name), v);
    return v;
  }
  void register_buffer(std::string name, Tensor<T>* b) { buffers_.emplace_back(std::move(name), b); }
  template <typename M>
  M* register_child(std::string name, std::unique_ptr<M> m) {
    M* raw = m.get();
    children_.emplace_back(std::move(name), std::move(m));
    return raw;
  }

 private:
  bool training_ = true;
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in, int out, int kernel, int stride, int padding, std::mt19937_64& rng, Init scheme = Init::Kaiming,
         bool with_bias = true)
      : in_channels(in), out_channels(out), opt{stride, padding} {
    weight = this->register_param("weight", init_weight<T>(Shape{out, in, kernel, kernel}, in * kernel * kernel, scheme, rng));
    if (with_bias) bias = this->register_param("bias", Tensor<T>(Shape{out}));
  }
  Var<T> forward(const Var<T>& x) { return conv2d(x, weight, bias, opt); }

  int in_channels, out_channels;
  ConvOptions opt;
  Var<T> weight, bias;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int in, int out, std::mt19937_64& rng, Init scheme = Init::Kaiming) : in_features(in), out_features(out) {
    weight = this->register_param("weight", init_weight<T>(Shape{out, in}, in, scheme, rng));
    bias = this->register_param("bias", Tensor<T>(Shape{out}));
  }
  Var<T> forward(const Var<T>& x) { return linear(x, weight, bias); }

  int in_features, out_features;
  Var<T> weight, bias;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, bool affine = true)
      : running_mean(Shape{channels}), running_var(Shape{channels}, T(1)) {
    if (affine) {
      gamma = this->register_param("gamma", Tensor<T>(Shape{channels}, T(1)));
      beta = this->register_param("beta", Tensor<T>(Shape{channels}));
    }
    this->register_buffer("running_mean", &running_mean);
    this->register_buffer("running_var", &running_var);
  }
  Var<T> forward(const Var<T>& x) {
    return batch_norm(x, gamma, beta, running_mean, running_var, this->is_training());
  }

  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;
};

}  // namespace freehead
