#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "vidreason/tensor.hpp"

namespace vidreason {

struct LossWeights {
  double txt = 1.0;
  double mask = 1.0;
  double ce = 2.0;
  double dice = 0.5;
  std::optional<double> ce_frame;  // per-scale overrides of `ce`
  std::optional<double> ce_video;

  double ce_for_frame() const { return ce_frame.value_or(ce); }
  double ce_for_video() const { return ce_video.value_or(ce); }
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossComponents {
  double txt = 0.0;
  double ce_f = 0.0;
  double ce_v = 0.0;
  double dice_f = 0.0;
  double dice_v = 0.0;
};

/// 1 - (2 sum(p g) + 1) / (sum p + sum g + 1).
double dice_loss(std::span<const double> prob, std::span<const std::uint8_t> gt);
/// Mean binary cross-entropy on logits, stable form.
double bce_loss(std::span<const double> logits, std::span<const std::uint8_t> gt);

/// Value plus dL/dlogit for a sigmoid-activated mask.
struct MaskLossGrad {
  double value = 0.0;
  std::vector<double> d_logits;
};
MaskLossGrad dice_loss_on_logits(std::span<const double> logits, std::span<const std::uint8_t> gt);
MaskLossGrad bce_loss_with_grad(std::span<const double> logits, std::span<const std::uint8_t> gt);

/// Matching cost: ce * bce + dice * dice_loss(sigmoid(logits)).
double mask_cost(std::span<const double> logits, std::span<const std::uint8_t> gt, double ce, double dice);

double total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace vidreason
