#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cea/tensor.hpp"

namespace cea {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-6;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-8;
  /// Fraction of elements per parameter to probe (1.0 = all). Sampling is
  /// deterministic given `seed`; at least one element per tensor is probed.
  double sample_fraction = 1.0;
  unsigned long long seed = 0;
};

struct ParamCheck {
  std::string name;
  std::size_t probed = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Compares tape gradients of a scalar-valued `f` against central finite
/// differences (f(x+eps) - f(x-eps)) / (2 eps), one element at a time.
/// `params` are perturbed in place and restored. Throws NumericError if `f`
/// evaluates to a non-finite value.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           const std::vector<std::string>& names, const GradCheckOptions& opts);

}  // namespace cea
