#include "vidreason/context_aggregation.hpp"

#include <algorithm>
#include <numeric>

#include "vidreason/errors.hpp"

namespace vidreason {

CamWeights CamWeights::init(std::size_t channels, Rng& rng) {
  return CamWeights{FeedForward::init(channels, 2 * channels, channels, rng)};
}

void CamWeights::visit(const std::string& prefix, const ParamVisitor& f) { ffn.visit(prefix + ".ffn", f); }

ContextAggregate aggregate_context(const TextEmbeddings& x_txt, const Tensor& f_top, const CamWeights& w,
                                   const CamConfig& cfg, CamCache* cache) {
  if (f_top.rows() == 0) throw EmptyContextError("context aggregation needs at least one visual token");
  if (x_txt.rows.cols() != f_top.cols()) {
    throw DimensionError("text embeddings " + shape_string(x_txt.rows.shape()) + " and visual features " +
                         shape_string(f_top.shape()) + " differ in width");
  }
  ContextAggregate out;
  out.logits = attention_logits(x_txt.rows, f_top, cfg.scaled);
  AttentionResult att = scaled_dot_attention(x_txt.rows, f_top, f_top, nullptr, cfg.scaled);
  FeedForwardCache* ffn_cache = cache != nullptr ? &cache->ffn : nullptr;
  out.embeddings = w.ffn.forward(att.out, ffn_cache);
  if (cfg.residual) out.embeddings += x_txt.rows;
  out.attention = std::move(att.weights);
  if (cache != nullptr) {
    cache->x_txt = x_txt.rows;
    cache->f_top = f_top;
    cache->attended = std::move(att.out);
  }
  return out;
}

CamInputGrads aggregate_context_backward(const Tensor& d_embeddings, const CamCache& cache, const CamWeights& w,
                                         const CamConfig& cfg, CamWeights& grad) {
  Tensor d_attended = w.ffn.backward(d_embeddings, cache.ffn, grad.ffn);
  AttentionResult att = scaled_dot_attention(cache.x_txt, cache.f_top, cache.f_top, nullptr, cfg.scaled);
  AttentionGrads g =
      scaled_dot_attention_backward(cache.x_txt, cache.f_top, cache.f_top, att.weights, d_attended, cfg.scaled);
  CamInputGrads out;
  out.d_x_txt = std::move(g.dq);
  if (cfg.residual) out.d_x_txt += d_embeddings;
  out.d_f_top = std::move(g.dk);
  out.d_f_top += g.dv;
  return out;
}

CondensedEmbeddings condense_top_k(const Tensor& embeddings, const Tensor& scores, std::size_t keep) {
  const std::size_t m = embeddings.rows();
  if (keep == 0 || keep > m) {
    throw ConfigError("condensation keeps " + std::to_string(keep) + " of " + std::to_string(m) + " queries");
  }
  if (scores.rows() != m) {
    throw DimensionError("score matrix " + shape_string(scores.shape()) + " does not match " +
                         std::to_string(m) + " queries");
  }
  std::vector<double> response(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = scores.row(i);
    response[i] = *std::max_element(r.begin(), r.end());
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return response[a] > response[b]; });
  CondensedEmbeddings out;
  out.source_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(out.source_indices.begin(), out.source_indices.end());
  out.rows = gather_rows(embeddings, out.source_indices);
  return out;
}

Tensor condense_top_k_backward(const Tensor& d_condensed, const std::vector<std::size_t>& source_indices,
                               std::size_t total_rows) {
  Tensor d = Tensor::matrix(total_rows, d_condensed.cols());
  for (std::size_t i = 0; i < source_indices.size(); ++i) {
    auto src = d_condensed.row(i);
    auto dst = d.row(source_indices[i]);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
  return d;
}

}  // namespace vidreason
