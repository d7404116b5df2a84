#pragma once

#include "freehead/autograd.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace freehead {

struct GradCheckResult {
  double rel_error = 0;    // ||analytic - numeric|| / ||numeric||
  double analytic_norm = 0;
  double numeric_norm = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, jointly over all inputs.
inline GradCheckResult grad_check(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                                  const std::vector<Tensor<double>>& inputs, double step = 1e-4) {
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  f(vars).backward();

  double diff2 = 0, an2 = 0, nu2 = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto eval_at = [&](double delta) {
        std::vector<Var<double>> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t[i] += delta;
          probe.emplace_back(std::move(t), false);
        }
        NoGradGuard ng;
        return f(probe).item();
      };
      const double numeric = (eval_at(step) - eval_at(-step)) / (2 * step);
      const double analytic = vars[k].has_grad() ? vars[k].grad()[i] : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
    }
  }
  GradCheckResult r;
  r.analytic_norm = std::sqrt(an2);
  r.numeric_norm = std::sqrt(nu2);
  r.rel_error = std::sqrt(diff2) / std::max(r.numeric_norm, 1e-12);
  return r;
}

}  // namespace freehead
