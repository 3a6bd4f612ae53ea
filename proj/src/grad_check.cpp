#include "cea/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cea {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective evaluated to non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           const std::vector<std::string>& names, const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tensor loss = f();
    if (!std::isfinite(loss.item()))
      throw NumericError("grad_check: objective evaluated to non-finite value");
    backward(loss);
  }

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const auto analytic = p.grad();
    ParamCheck check;
    check.name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
    auto values = p.mutable_data();
    std::vector<std::size_t> picks;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (opts.sample_fraction >= 1.0 || unit(rng) < opts.sample_fraction) picks.push_back(i);
    if (picks.empty() && !values.empty())
      picks.push_back(static_cast<std::size_t>(rng() % values.size()));
    for (auto i : picks) {
      const double saved = values[i];
      values[i] = saved + opts.eps;
      const double up = eval_scalar(f);
      values[i] = saved - opts.eps;
      const double down = eval_scalar(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.floor});
      const double rel = abs_err / denom;
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      if (rel > check.max_rel_error || check.probed == 0) {
        check.max_rel_error = std::max(check.max_rel_error, rel);
        check.worst_index = i;
        check.analytic_at_worst = analytic[i];
        check.numeric_at_worst = numeric;
      }
      ++check.probed;
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace cea
