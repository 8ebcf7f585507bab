#pragma once

#include <cstddef>
#include <vector>

#include "vidreason/tensor.hpp"

namespace vidreason {

struct OptimizerConfig {
  double lr = 1e-3;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_iters = 10;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

/// Linear warmup for iter <= warmup_iters, then cosine decay reaching 0 at max_iters.
double scheduled_lr(const OptimizerConfig& cfg, std::size_t iter, std::size_t max_iters);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t steps = 0;

  bool operator==(const AdamState&) const = default;
};

/// One AdamW update at learning rate `lr` (already scheduled). Decay is
/// decoupled: p <- p (1 - lr wd) before the moment step.
void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
                const OptimizerConfig& cfg, double lr);

}  // namespace vidreason
