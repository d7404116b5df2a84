#pragma once

#include "freehead/autograd.hpp"

#include <cmath>
#include <vector>

namespace freehead {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0;  // global L2 norm; 0 disables
};

/// Adam over a fixed parameter list. Parameters with requires_grad off are
/// never touched, so freezing is just toggling that flag.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(Tensor<T>::Array::Zero(p.value().size()));
      v_.emplace_back(Tensor<T>::Array::Zero(p.value().size()));
    }
  }

  // Global L2 norm of the gradients currently held by trainable parameters.
  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
      if (p.requires_grad() && p.has_grad()) s += p.grad().array().template cast<double>().square().sum();
    return std::sqrt(s);
  }

  void step() {
    ++t_;
    double scale = 1.0;
    if (opt_.grad_clip > 0) {
      const double n = grad_norm();
      if (n > opt_.grad_clip) scale = opt_.grad_clip / n;
    }
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    const T step_size = T(opt_.lr / bc1);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i];
      if (!p.requires_grad() || !p.has_grad()) continue;
      const auto g = (p.grad().array() * T(scale)).eval();
      m_[i] = T(opt_.beta1) * m_[i] + T(1 - opt_.beta1) * g;
      v_[i] = T(opt_.beta2) * v_[i] + T(1 - opt_.beta2) * g.square();
      p.mutable_value().array() -= step_size * m_[i] / ((v_[i] / T(bc2)).sqrt() + T(opt_.eps));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }

 private:
  std::vector<Var<T>> params_;
  AdamOptions opt_;
  std::vector<typename Tensor<T>::Array> m_, v_;
  long t_ = 0;
};

}  // namespace freehead
