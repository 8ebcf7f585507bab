#include "vidreason/losses.hpp"

#include <cmath>
#include <string>

#include "vidreason/errors.hpp"
#include "vidreason/numerics.hpp"

namespace vidreason {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionError("mask sizes differ: " + std::to_string(a) + " vs " + std::to_string(b));
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

void LossWeights::validate() const {
  const double vals[] = {txt, mask, ce, dice, ce_for_frame(), ce_for_video()};
  for (double v : vals) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

double dice_loss(std::span<const double> prob, std::span<const std::uint8_t> gt) {
  check_sizes(prob.size(), gt.size());
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double g = gt[i] != 0 ? 1.0 : 0.0;
    inter += prob[i] * g;
    sp += prob[i];
    sg += g;
  }
  return 1.0 - (2.0 * inter + 1.0) / (sp + sg + 1.0);
}

double bce_loss(std::span<const double> logits, std::span<const std::uint8_t> gt) {
  check_sizes(logits.size(), gt.size());
  if (logits.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // -[g log s(z) + (1-g) log(1-s(z))] = softplus(z) - g z
    sum += softplus(logits[i]) - (gt[i] != 0 ? logits[i] : 0.0);
  }
  return sum / static_cast<double>(logits.size());
}

MaskLossGrad dice_loss_on_logits(std::span<const double> logits, std::span<const std::uint8_t> gt) {
  check_sizes(logits.size(), gt.size());
  std::vector<double> p(logits.size());
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = sigmoid(logits[i]);
    const double g = gt[i] != 0 ? 1.0 : 0.0;
    inter += p[i] * g;
    sp += p[i];
    sg += g;
  }
  const double num = 2.0 * inter + 1.0;
  const double den = sp + sg + 1.0;
  MaskLossGrad out;
  out.value = 1.0 - num / den;
  out.d_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double g = gt[i] != 0 ? 1.0 : 0.0;
    const double d_prob = -(2.0 * g * den - num) / (den * den);
    out.d_logits[i] = d_prob * p[i] * (1.0 - p[i]);
  }
  return out;
}

MaskLossGrad bce_loss_with_grad(std::span<const double> logits, std::span<const std::uint8_t> gt) {
  MaskLossGrad out;
  out.value = bce_loss(logits, gt);
  out.d_logits.resize(logits.size());
  const double inv = logits.empty() ? 0.0 : 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.d_logits[i] = (sigmoid(logits[i]) - (gt[i] != 0 ? 1.0 : 0.0)) * inv;
  }
  return out;
}

double mask_cost(std::span<const double> logits, std::span<const std::uint8_t> gt, double ce, double dice) {
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = sigmoid(logits[i]);
  return ce * bce_loss(logits, gt) + dice * dice_loss(p, gt);
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  const double frame = w.ce_for_frame() * c.ce_f + w.dice * c.dice_f;
  const double video = w.ce_for_video() * c.ce_v + w.dice * c.dice_v;
  return w.txt * c.txt + w.mask * (frame + video);
}

}  // namespace vidreason
