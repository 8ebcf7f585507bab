#include "vidreason/layers.hpp"

#include <cmath>

#include "vidreason/errors.hpp"

namespace vidreason {

void add_row_broadcast(Tensor& x, const Tensor& row) {
  if (row.size() != x.cols()) {
    throw DimensionError("row broadcast of " + shape_string(row.shape()) + " onto " + shape_string(x.shape()));
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  }
}

Tensor column_sums(const Tensor& x) {
  Tensor s = Tensor::matrix(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
  }
  return s;
}

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = gelu(v);
  return y;
}

Tensor gelu_backward(const Tensor& pre, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_grad(pre[i]);
  return dx;
}

// Linear

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight = random_uniform({in, out}, rng, -bound, bound);
  l.bias = Tensor::matrix(1, with_bias ? out : 0);
  return l;
}

Linear Linear::identity(std::size_t width) {
  Linear l;
  l.weight = Tensor::matrix(width, width);
  for (std::size_t i = 0; i < width; ++i) l.weight(i, i) = 1.0;
  l.bias = Tensor::matrix(1, width);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  if (bias.size() != 0) add_row_broadcast(y, bias);
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy, Linear& grad) const {
  grad.weight += matmul_tn(x, dy);
  if (bias.size() != 0) grad.bias += column_sums(dy);
  return matmul_nt(dy, weight);
}

void Linear::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", weight);
  if (bias.size() != 0) f(prefix + ".bias", bias);
}

// LayerNorm

namespace {
constexpr double kLayerNormEps = 1e-5;
}

LayerNorm LayerNorm::init(std::size_t width) {
  LayerNorm ln;
  ln.gain = Tensor::matrix(1, width, 1.0);
  ln.bias = Tensor::matrix(1, width, 0.0);
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x, LayerNormCache* cache) const {
  const std::size_t c = x.cols();
  Tensor y = Tensor::zeros_like(x);
  Tensor xhat = Tensor::zeros_like(x);
  std::vector<double> inv(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    inv[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (r[j] - mean) * inv[i];
      y(i, j) = xhat(i, j) * gain[j] + bias[j];
    }
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& dy, const LayerNormCache& cache, LayerNorm& grad) const {
  const std::size_t c = dy.cols();
  Tensor dx = Tensor::zeros_like(dy);
  std::vector<double> dxhat(c);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      grad.gain[j] += dy(i, j) * cache.xhat(i, j);
      grad.bias[j] += dy(i, j);
      dxhat[j] = dy(i, j) * gain[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * cache.xhat(i, j);
    }
    mean_d /= static_cast<double>(c);
    mean_dx /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) {
      dx(i, j) = cache.inv_std[i] * (dxhat[j] - mean_d - cache.xhat(i, j) * mean_dx);
    }
  }
  return dx;
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".gain", gain);
  f(prefix + ".bias", bias);
}

// FeedForward

FeedForward FeedForward::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return FeedForward{Linear::init(in, hidden, rng), Linear::init(hidden, out, rng)};
}

Tensor FeedForward::forward(const Tensor& x, FeedForwardCache* cache) const {
  Tensor pre = fc1.forward(x);
  Tensor act = vidreason::gelu(pre);
  Tensor y = fc2.forward(act);
  if (cache != nullptr) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Tensor FeedForward::backward(const Tensor& dy, const FeedForwardCache& cache, FeedForward& grad) const {
  Tensor dact = fc2.backward(cache.act, dy, grad.fc2);
  Tensor dpre = gelu_backward(cache.pre, dact);
  return fc1.backward(cache.x, dpre, grad.fc1);
}

void FeedForward::visit(const std::string& prefix, const ParamVisitor& f) {
  fc1.visit(prefix + ".fc1", f);
  fc2.visit(prefix + ".fc2", f);
}

// AttentionLayer

AttentionLayer AttentionLayer::init(std::size_t width, Rng& rng) {
  AttentionLayer a;
  a.wq = Linear::init(width, width, rng);
  a.wk = Linear::init(width, width, rng, false);
  a.wv = Linear::init(width, width, rng);
  a.wo = Linear::init(width, width, rng);
  return a;
}

Tensor AttentionLayer::forward(const Tensor& query_in, const Tensor& kv_in, const Tensor* mask, bool scaled,
                               AttentionCache* cache) const {
  Tensor q = wq.forward(query_in);
  Tensor k = wk.forward(kv_in);
  Tensor v = wv.forward(kv_in);
  AttentionResult att = scaled_dot_attention(q, k, v, mask, scaled);
  Tensor y = wo.forward(att.out);
  if (cache != nullptr) {
    cache->query_in = query_in;
    cache->kv_in = kv_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(att.weights);
    cache->context = std::move(att.out);
  }
  return y;
}

AttentionInputGrads AttentionLayer::backward(const Tensor& dy, const AttentionCache& cache, bool scaled,
                                             AttentionLayer& grad) const {
  Tensor dctx = wo.backward(cache.context, dy, grad.wo);
  AttentionGrads g = scaled_dot_attention_backward(cache.q, cache.k, cache.v, cache.weights, dctx, scaled);
  AttentionInputGrads out;
  out.d_query_in = wq.backward(cache.query_in, g.dq, grad.wq);
  out.d_kv_in = wk.backward(cache.kv_in, g.dk, grad.wk);
  out.d_kv_in += wv.backward(cache.kv_in, g.dv, grad.wv);
  return out;
}

void AttentionLayer::visit(const std::string& prefix, const ParamVisitor& f) {
  wq.visit(prefix + ".wq", f);
  wk.visit(prefix + ".wk", f);
  wv.visit(prefix + ".wv", f);
  wo.visit(prefix + ".wo", f);
}

}  // namespace vidreason
