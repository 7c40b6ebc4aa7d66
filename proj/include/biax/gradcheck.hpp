#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "biax/tensor.hpp"

namespace biax {

struct GradMismatch {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double worst_abs_err = 0.0;
  std::vector<GradMismatch> mismatches;
  bool ok() const { return mismatches.empty(); }
};

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-3;
  double abs_tol = 1e-6;
  // Check at most this many entries per tensor (evenly spaced); 0 = all.
  std::size_t max_per_tensor = 0;
};

/// Central finite-difference oracle for reverse-mode gradients.
///
/// `loss_fn` must rebuild the graph from the current parameter values on each
/// call and return a scalar. An entry passes when
/// |analytic - numeric| <= max(rel_tol * max(|analytic|, |numeric|), abs_tol).
template <class LossFn>
GradCheckReport check_gradients(LossFn&& loss_fn, std::vector<std::pair<std::string, Tensor>> params,
                                const GradCheckOptions& opt = {}) {
  for (auto& [_, t] : params) t.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [_, t] : params) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, t] = params[k];
    auto d = t.mutable_data();
    const std::size_t n = d.size();
    const std::size_t stride = (opt.max_per_tensor == 0 || n <= opt.max_per_tensor) ? 1 : n / opt.max_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = d[i];
      d[i] = orig + opt.step;
      const double up = loss_fn().item();
      d[i] = orig - opt.step;
      const double down = loss_fn().item();
      d[i] = orig;
      const double num = (up - down) / (2.0 * opt.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - num);
      rep.worst_abs_err = std::max(rep.worst_abs_err, err);
      ++rep.checked;
      if (err > std::max(opt.rel_tol * std::max(std::abs(a), std::abs(num)), opt.abs_tol))
        rep.mismatches.push_back({name, i, a, num});
    }
  }
  return rep;
}

}  // namespace biax
