#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "vidreason/tensor.hpp"

namespace vidreason {

// Additive bias applied to disallowed attention positions before the softmax.
inline constexpr double kMaskedLogit = -1e30;

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& m);
/// Gradient of softmax_rows given its output y and the upstream gradient dy.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

struct AttentionResult {
  Tensor out;      // a x C
  Tensor weights;  // a x b
};

struct AttentionGrads {
  Tensor dq;
  Tensor dk;
  Tensor dv;
};

/// weights = softmax(Q K^T * s + maskbias), out = weights V, with s = 1/sqrt(C)
/// when `scaled`. `mask` is a binary a x b tensor; zero entries are excluded.
/// Throws MaskedRowError if a mask row excludes every key.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const Tensor* mask = nullptr, bool scaled = true);
AttentionGrads scaled_dot_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Tensor& weights, const Tensor& dout, bool scaled = true);

/// Pre-softmax logits Q K^T * s (no masking), used for response scoring.
Tensor attention_logits(const Tensor& q, const Tensor& k, bool scaled = true);

double sigmoid(double z);
double gelu(double x);
double gelu_grad(double x);

/// Deterministic 64-bit generator used throughout; uniform draws are computed
/// from raw bits so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [0, n).
  std::size_t below(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// splitmix64 mix of a base seed and an index, for independent sub-streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi);
Tensor random_normal(Shape shape, Rng& rng, double stddev);

}  // namespace vidreason
