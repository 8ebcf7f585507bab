#pragma once

#include <cmath>
#include <functional>

#include "vidreason/gradcheck.hpp"
#include "vidreason/numerics.hpp"
#include "vidreason/tensor.hpp"

namespace vrtest {

using vidreason::Rng;
using vidreason::Tensor;

inline Tensor rand_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return vidreason::random_uniform({r, c}, rng, -scale, scale);
}

// sum(R * y), the usual probe objective for gradient checks.
inline double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

inline constexpr double kGradTol = 1e-4;
inline constexpr double kEps = 1e-5;

}  // namespace vrtest
