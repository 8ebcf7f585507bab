#include "vidreason/hungarian.hpp"

#include <limits>

#include "vidreason/errors.hpp"
#include "vidreason/numerics.hpp"

namespace vidreason {

std::size_t Assignment::matched() const {
  std::size_t n = 0;
  for (const auto& m : pred_to_gt) n += m.has_value();
  return n;
}

namespace {

// Shortest augmenting path with potentials; requires rows <= cols.
// Returns the column assigned to each row.
std::vector<std::size_t> solve_wide(const Tensor& c) {
  const std::size_t n = c.rows(), m = c.cols();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw DimensionError("cost matrix must be 2-D, got " + shape_string(cost.shape()));
  if (!all_finite(cost)) throw EvaluationError("cost matrix contains non-finite entries");
  Assignment a;
  const std::size_t p = cost.rows(), g = cost.cols();
  a.pred_to_gt.assign(p, std::nullopt);
  if (p == 0 || g == 0) return a;
  if (p <= g) {
    const auto cols = solve_wide(cost);
    for (std::size_t i = 0; i < p; ++i) a.pred_to_gt[i] = cols[i];
  } else {
    const auto rows = solve_wide(transpose(cost));
    for (std::size_t j = 0; j < g; ++j) a.pred_to_gt[rows[j]] = j;
  }
  for (std::size_t i = 0; i < p; ++i) {
    if (a.pred_to_gt[i]) a.cost += cost(i, *a.pred_to_gt[i]);
  }
  return a;
}

}  // namespace vidreason
