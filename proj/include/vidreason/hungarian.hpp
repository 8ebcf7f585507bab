#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "vidreason/tensor.hpp"

namespace vidreason {

struct Assignment {
  std::vector<std::optional<std::size_t>> pred_to_gt;  // one entry per row of the cost matrix
  double cost = 0.0;

  std::size_t matched() const;
};

/// Minimum-cost one-to-one matching of min(P, G) pairs for a P x G cost matrix.
Assignment hungarian_match(const Tensor& cost);

}  // namespace vidreason
