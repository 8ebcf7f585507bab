#pragma once

#include <functional>
#include <string>

#include "vidreason/numerics.hpp"
#include "vidreason/tensor.hpp"

namespace vidreason {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

/// y = x W + b with W stored in x out.
struct Linear {
  Tensor weight;
  Tensor bias;  // 1 x out

  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  static Linear identity(std::size_t width);

  Tensor forward(const Tensor& x) const;
  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  Tensor backward(const Tensor& x, const Tensor& dy, Linear& grad) const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct LayerNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

struct LayerNorm {
  Tensor gain;  // 1 x C
  Tensor bias;  // 1 x C

  static LayerNorm init(std::size_t width);
  Tensor forward(const Tensor& x, LayerNormCache* cache = nullptr) const;
  Tensor backward(const Tensor& dy, const LayerNormCache& cache, LayerNorm& grad) const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct FeedForwardCache {
  Tensor x;
  Tensor pre;  // fc1 output before GELU
  Tensor act;
};

/// Two-layer GELU MLP.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  static FeedForward init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x, FeedForwardCache* cache = nullptr) const;
  Tensor backward(const Tensor& dy, const FeedForwardCache& cache, FeedForward& grad) const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct AttentionCache {
  Tensor query_in;
  Tensor kv_in;
  Tensor q, k, v;
  Tensor weights;
  Tensor context;
};

struct AttentionInputGrads {
  Tensor d_query_in;
  Tensor d_kv_in;
};

/// Single-head attention with query/key/value/output projections.
struct AttentionLayer {
  Linear wq, wk, wv, wo;

  static AttentionLayer init(std::size_t width, Rng& rng);
  Tensor forward(const Tensor& query_in, const Tensor& kv_in, const Tensor* mask, bool scaled,
                 AttentionCache* cache = nullptr) const;
  AttentionInputGrads backward(const Tensor& dy, const AttentionCache& cache, bool scaled,
                               AttentionLayer& grad) const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

/// Elementwise GELU and its backward given the pre-activation.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& pre, const Tensor& dy);

/// Adds a 1 x C row to every row of x.
void add_row_broadcast(Tensor& x, const Tensor& row);
/// Column sums of a rank-2 tensor as a 1 x C row.
Tensor column_sums(const Tensor& x);

}  // namespace vidreason
