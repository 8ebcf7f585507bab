#pragma once

#include <cstddef>
#include <functional>

#include "vidreason/tensor.hpp"

namespace vidreason {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double eps = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Central-difference check of `analytic_grad` against f at x. The relative
/// error per entry is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_diff_grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                       const Tensor& analytic_grad, double eps = 1e-5);

/// Same check, but perturbs `param` in place and evaluates the closure, which
/// is expected to read `param` itself. `param` is restored before returning.
GradCheckReport finite_diff_grad_check_inplace(const std::function<double()>& f, Tensor& param,
                                               const Tensor& analytic_grad, double eps = 1e-5);

}  // namespace vidreason
