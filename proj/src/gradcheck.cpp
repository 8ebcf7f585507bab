#include "vidreason/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vidreason/errors.hpp"

namespace vidreason {

GradCheckReport finite_diff_grad_check_inplace(const std::function<double()>& f, Tensor& param,
                                               const Tensor& analytic_grad, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("finite-difference step must lie in (0, 1e-2]");
  if (analytic_grad.shape() != param.shape()) {
    throw DimensionError("analytic gradient " + shape_string(analytic_grad.shape()) + " vs parameter " +
                         shape_string(param.shape()));
  }
  GradCheckReport report;
  report.eps = eps;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + eps;
    const double fp = f();
    param[i] = saved - eps;
    const double fm = f();
    param[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("non-finite function value while perturbing entry " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic_grad[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (i == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

GradCheckReport finite_diff_grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                       const Tensor& analytic_grad, double eps) {
  Tensor probe = x;
  return finite_diff_grad_check_inplace([&] { return f(probe); }, probe, analytic_grad, eps);
}

}  // namespace vidreason
