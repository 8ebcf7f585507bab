#include "vidreason/decoder.hpp"

#include <cmath>

#include "vidreason/errors.hpp"

namespace vidreason {

std::size_t MaskTracklet::area() const {
  std::size_t n = 0;
  for (auto v : masks) n += v != 0;
  return n;
}

ScaleWeights ScaleWeights::init(std::size_t width, Rng& rng) {
  ScaleWeights w;
  w.ln_cross = LayerNorm::init(width);
  w.cross = AttentionLayer::init(width, rng);
  w.ln_self = LayerNorm::init(width);
  w.self = AttentionLayer::init(width, rng);
  w.ln_ffn = LayerNorm::init(width);
  w.ffn = FeedForward::init(width, 2 * width, width, rng);
  return w;
}

void ScaleWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  ln_cross.visit(prefix + ".ln_cross", f);
  cross.visit(prefix + ".cross", f);
  ln_self.visit(prefix + ".ln_self", f);
  self.visit(prefix + ".self", f);
  ln_ffn.visit(prefix + ".ln_ffn", f);
  ffn.visit(prefix + ".ffn", f);
}

DecoderWeights DecoderWeights::init(std::size_t layers, std::size_t width, Rng& rng) {
  DecoderWeights w;
  for (std::size_t l = 0; l < layers; ++l) {
    DecoderLayerWeights lw;
    lw.frame = ScaleWeights::init(width, rng);
    lw.video = ScaleWeights::init(width, rng);
    w.layers.push_back(std::move(lw));
  }
  w.mask_head = FeedForward::init(width, width, width, rng);
  return w;
}

void DecoderWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].frame.visit(prefix + ".layer" + std::to_string(l) + ".frame", f);
    layers[l].video.visit(prefix + ".layer" + std::to_string(l) + ".video", f);
  }
  mask_head.visit(prefix + ".mask_head", f);
}

Tensor scale_block_forward(const ScaleWeights& w, const Tensor& q, const Tensor& features, const Tensor* mask,
                           bool scaled, ScaleBlockCache* cache) {
  Tensor n1 = w.ln_cross.forward(q, cache != nullptr ? &cache->ln_cross : nullptr);
  Tensor x = q + w.cross.forward(n1, features, mask, scaled, cache != nullptr ? &cache->cross : nullptr);
  Tensor n2 = w.ln_self.forward(x, cache != nullptr ? &cache->ln_self : nullptr);
  x += w.self.forward(n2, n2, nullptr, scaled, cache != nullptr ? &cache->self : nullptr);
  Tensor n3 = w.ln_ffn.forward(x, cache != nullptr ? &cache->ln_ffn : nullptr);
  x += w.ffn.forward(n3, cache != nullptr ? &cache->ffn : nullptr);
  return x;
}

ScaleBlockGrads scale_block_backward(const ScaleWeights& w, const Tensor& dy, const ScaleBlockCache& cache,
                                     bool scaled, ScaleWeights& grad) {
  Tensor dx = dy;
  dx += w.ln_ffn.backward(w.ffn.backward(dx, cache.ffn, grad.ffn), cache.ln_ffn, grad.ln_ffn);
  AttentionInputGrads sg = w.self.backward(dx, cache.self, scaled, grad.self);
  sg.d_query_in += sg.d_kv_in;
  dx += w.ln_self.backward(sg.d_query_in, cache.ln_self, grad.ln_self);
  AttentionInputGrads cg = w.cross.backward(dx, cache.cross, scaled, grad.cross);
  dx += w.ln_cross.backward(cg.d_query_in, cache.ln_cross, grad.ln_cross);
  return ScaleBlockGrads{std::move(dx), std::move(cg.d_kv_in)};
}

Tensor with_unmasked_fallback(const Tensor& mask) {
  Tensor out = mask;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    bool any = false;
    for (double v : r) any = any || v != 0.0;
    if (!any) {
      for (auto& v : r) v = 1.0;
    }
  }
  return out;
}

DecoderState decoder_layer(const DecoderState& state, const DecoderLayerWeights& w,
                           const std::vector<Tensor>& level_features, const AttentionMasks* prev_masks,
                           const DecoderConfig& cfg, DecoderLayerCache* cache) {
  const std::size_t frames = level_features.size();
  DecoderState next;
  next.layer = state.layer + 1;
  if (cache != nullptr) cache->frame.assign(cfg.frame_video ? frames : 0, {});
  if (cfg.frame_video) {
    if (state.frame.size() != frames) throw DimensionError("decoder state and features disagree on frame count");
    for (std::size_t t = 0; t < frames; ++t) {
      const Tensor* mask = prev_masks != nullptr ? &prev_masks->frame[t] : nullptr;
      next.frame.push_back(scale_block_forward(w.frame, state.frame[t], level_features[t], mask, cfg.scaled,
                                               cache != nullptr ? &cache->frame[t] : nullptr));
    }
  }
  const Tensor all = concat_rows(level_features);
  const Tensor* vmask = prev_masks != nullptr ? &prev_masks->video : nullptr;
  next.video = scale_block_forward(w.video, state.video, all, vmask, cfg.scaled,
                                   cache != nullptr ? &cache->video : nullptr);
  return next;
}

Tensor video_frame_aggregate(const Tensor& q_video, const Tensor& q_frame, double gamma, AggregateCache* cache) {
  if (q_video.cols() != q_frame.cols()) {
    throw DimensionError("aggregation widths differ: " + shape_string(q_video.shape()) + " vs " +
                         shape_string(q_frame.shape()));
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("momentum factor must lie in [0, 1]");
  Tensor weights = softmax_rows(matmul_nt(q_video, q_frame));
  Tensor out = matmul(weights, q_frame) * gamma;
  out += q_video * (1.0 - gamma);
  if (cache != nullptr) {
    cache->q_video = q_video;
    cache->q_frame = q_frame;
    cache->weights = std::move(weights);
  }
  return out;
}

AggregateGrads video_frame_aggregate_backward(const Tensor& d_out, const AggregateCache& cache, double gamma) {
  Tensor dw = matmul_nt(d_out, cache.q_frame) * gamma;
  Tensor ds = softmax_rows_backward(cache.weights, dw);
  AggregateGrads g;
  g.d_video = d_out * (1.0 - gamma);
  g.d_video += matmul(ds, cache.q_frame);
  g.d_frame = matmul_tn(cache.weights, d_out) * gamma;
  g.d_frame += matmul_tn(ds, cache.q_video);
  return g;
}

BilinearUpsampler::BilinearUpsampler(GridSize grid, std::size_t factor) : grid_(grid), factor_(factor) {
  auto taps = [&](std::size_t n) {
    std::vector<Tap> out;
    for (std::size_t o = 0; o < n * factor; ++o) {
      double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      src = std::max(src, 0.0);
      auto lo = static_cast<std::size_t>(std::floor(src));
      if (lo >= n - 1) {
        out.push_back(Tap{n - 1, n - 1, 0.0});
      } else {
        out.push_back(Tap{lo, lo + 1, src - static_cast<double>(lo)});
      }
    }
    return out;
  };
  row_taps_ = taps(grid.rows);
  col_taps_ = taps(grid.cols);
}

Tensor BilinearUpsampler::forward(const Tensor& in) const {
  if (in.cols() != grid_.cells()) {
    throw DimensionError("upsampler expects " + std::to_string(grid_.cells()) + " cells, got " +
                         shape_string(in.shape()));
  }
  const std::size_t w = out_cols();
  Tensor out = Tensor::matrix(in.rows(), out_rows() * w);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto src = in.row(r);
    auto dst = out.row(r);
    for (std::size_t y = 0; y < row_taps_.size(); ++y) {
      const Tap& ty = row_taps_[y];
      const double* lo_row = src.data() + ty.lo * grid_.cols;
      const double* hi_row = src.data() + ty.hi * grid_.cols;
      for (std::size_t x = 0; x < w; ++x) {
        const Tap& tx = col_taps_[x];
        const double top = lo_row[tx.lo] * (1.0 - tx.w_hi) + lo_row[tx.hi] * tx.w_hi;
        const double bot = hi_row[tx.lo] * (1.0 - tx.w_hi) + hi_row[tx.hi] * tx.w_hi;
        dst[y * w + x] = top * (1.0 - ty.w_hi) + bot * ty.w_hi;
      }
    }
  }
  return out;
}

Tensor BilinearUpsampler::backward(const Tensor& d_out) const {
  const std::size_t w = out_cols();
  Tensor din = Tensor::matrix(d_out.rows(), grid_.cells());
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    auto src = d_out.row(r);
    auto dst = din.row(r);
    for (std::size_t y = 0; y < row_taps_.size(); ++y) {
      const Tap& ty = row_taps_[y];
      double* lo_row = dst.data() + ty.lo * grid_.cols;
      double* hi_row = dst.data() + ty.hi * grid_.cols;
      for (std::size_t x = 0; x < w; ++x) {
        const Tap& tx = col_taps_[x];
        const double g = src[y * w + x];
        const double gt = g * (1.0 - ty.w_hi), gb = g * ty.w_hi;
        lo_row[tx.lo] += gt * (1.0 - tx.w_hi);
        lo_row[tx.hi] += gt * tx.w_hi;
        hi_row[tx.lo] += gb * (1.0 - tx.w_hi);
        hi_row[tx.hi] += gb * tx.w_hi;
      }
    }
  }
  return din;
}

MaskPrediction predict_masks(const Tensor& q, const Tensor& pixel_features, const FeedForward& mlp,
                             const BilinearUpsampler& up, MaskHeadCache* cache) {
  Tensor embedded = mlp.forward(q, cache != nullptr ? &cache->mlp : nullptr);
  if (embedded.cols() != pixel_features.cols()) {
    throw DimensionError("mask embedding " + shape_string(embedded.shape()) + " vs pixel features " +
                         shape_string(pixel_features.shape()));
  }
  MaskPrediction p;
  p.grid_logits = matmul_nt(embedded, pixel_features);
  p.logits = up.forward(p.grid_logits);
  if (cache != nullptr) cache->embedded = std::move(embedded);
  return p;
}

namespace {

// Mean of probabilities over factor x factor blocks of the finest grid.
Tensor pool_probabilities(const Tensor& grid_logits, const GridSize& fine, std::size_t factor) {
  const GridSize coarse{fine.rows / factor, fine.cols / factor};
  Tensor out = Tensor::matrix(grid_logits.rows(), coarse.cells());
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t n = 0; n < grid_logits.rows(); ++n) {
    for (std::size_t y = 0; y < fine.rows; ++y)
      for (std::size_t x = 0; x < fine.cols; ++x)
        out(n, (y / factor) * coarse.cols + x / factor) += sigmoid(grid_logits(n, y * fine.cols + x)) * inv;
  }
  return out;
}

Tensor threshold(const Tensor& probs, double thr) {
  Tensor m = Tensor::zeros_like(probs);
  for (std::size_t i = 0; i < probs.size(); ++i) m[i] = probs[i] > thr ? 1.0 : 0.0;
  return m;
}

AttentionMasks masks_from_state(const DecoderState& state, const MultiScaleFeatures& features, std::size_t level,
                                const FeedForward& mlp, const DecoderConfig& cfg) {
  const GridSize& fine = features.grids.front();
  const std::size_t factor = std::size_t{1} << level;
  AttentionMasks masks;
  const std::size_t frames = features.frames();
  for (std::size_t t = 0; t < state.frame.size(); ++t) {
    Tensor g = matmul_nt(mlp.forward(state.frame[t]), features.maps[t].front());
    masks.frame.push_back(with_unmasked_fallback(threshold(pool_probabilities(g, fine, factor), cfg.mask_threshold)));
  }
  const Tensor ev = mlp.forward(state.video);
  std::vector<Tensor> per_frame;
  for (std::size_t t = 0; t < frames; ++t) {
    Tensor g = matmul_nt(ev, features.maps[t].front());
    per_frame.push_back(threshold(pool_probabilities(g, fine, factor), cfg.mask_threshold));
  }
  const std::size_t cells = per_frame.front().cols();
  Tensor video = Tensor::matrix(state.video.rows(), frames * cells);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < video.rows(); ++n)
      for (std::size_t c = 0; c < cells; ++c) video(n, t * cells + c) = per_frame[t](n, c);
  masks.video = with_unmasked_fallback(video);
  return masks;
}

std::size_t layer_level(std::size_t layer, std::size_t layers) { return layers - 1 - layer; }

}  // namespace

DecoderOutput run_decoder(const SegQueries& queries, const MultiScaleFeatures& features, const DecoderWeights& w,
                          const DecoderConfig& cfg, std::size_t patch, DecoderCache* cache) {
  const std::size_t layers = cfg.layers;
  const std::size_t frames = features.frames();
  if (layers > features.levels()) {
    throw ConfigError("decoder has " + std::to_string(layers) + " layers but only " +
                      std::to_string(features.levels()) + " feature scales");
  }
  if (w.layers.size() < layers) throw ConfigError("decoder weights hold fewer layers than configured");
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw ConfigError("momentum factor must lie in [0, 1]");

  DecoderState state;
  if (cfg.frame_video) state.frame.assign(frames, queries.frame);
  state.video = queries.video;
  if (cache != nullptr) {
    cache->layers.assign(layers, {});
    cache->aggregates.assign(layers, {});
  }
  std::optional<AttentionMasks> masks;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t level = layer_level(l, layers);
    std::vector<Tensor> level_features;
    for (std::size_t t = 0; t < frames; ++t) level_features.push_back(features.maps[t][level]);
    DecoderLayerCache* lc = cache != nullptr ? &cache->layers[l] : nullptr;
    if (lc != nullptr) lc->level = level;
    state = decoder_layer(state, w.layers[l], level_features, masks ? &*masks : nullptr, cfg, lc);

    if (cfg.frame_video) {
      auto* agg = cache != nullptr ? &cache->aggregates[l] : nullptr;
      if (cfg.strategy == AggregationStrategy::kFeatureFusion) {
        Tensor mean = Tensor::zeros_like(state.video);
        for (const auto& f : state.frame) mean += f;
        mean *= cfg.gamma / static_cast<double>(frames);
        state.video = mean + state.video * (1.0 - cfg.gamma);
      } else if (cfg.order == AggregationOrder::kStacked) {
        AggregateCache ac;
        state.video = video_frame_aggregate(state.video, concat_rows(state.frame), cfg.gamma, &ac);
        if (agg != nullptr) agg->push_back(std::move(ac));
      } else {
        for (std::size_t t = 0; t < frames; ++t) {
          AggregateCache ac;
          state.video = video_frame_aggregate(state.video, state.frame[t], cfg.gamma, &ac);
          if (agg != nullptr) agg->push_back(std::move(ac));
        }
      }
    }
    if (cfg.masked_attention && l + 1 < layers) {
      masks = masks_from_state(state, features, layer_level(l + 1, layers), w.mask_head, cfg);
    }
  }

  const BilinearUpsampler up(features.grids.front(), patch);
  DecoderOutput out;
  if (cache != nullptr) cache->frame_heads.assign(cfg.frame_video ? frames : 0, {});
  if (cfg.frame_video) {
    for (std::size_t t = 0; t < frames; ++t) {
      out.frame_logits.push_back(predict_masks(state.frame[t], features.maps[t].front(), w.mask_head, up,
                                               cache != nullptr ? &cache->frame_heads[t] : nullptr)
                                     .logits);
    }
  }
  MaskHeadCache vh;
  const Tensor ev = w.mask_head.forward(state.video, &vh.mlp);
  for (std::size_t t = 0; t < frames; ++t) {
    out.video_logits.push_back(up.forward(matmul_nt(ev, features.maps[t].front())));
  }
  if (cache != nullptr) {
    vh.embedded = ev;
    cache->video_head = std::move(vh);
    cache->frame_final = state.frame;
    cache->video_final = state.video;
  }
  state.layer = layers;
  out.final_state = std::move(state);
  return out;
}

DecoderInputGrads run_decoder_backward(const std::vector<Tensor>& d_frame_logits,
                                       const std::vector<Tensor>& d_video_logits, const MultiScaleFeatures& features,
                                       const DecoderWeights& w, const DecoderConfig& cfg, std::size_t patch,
                                       const DecoderCache& cache, DecoderWeights& grad) {
  const std::size_t frames = features.frames();
  const std::size_t layers = cfg.layers;
  const BilinearUpsampler up(features.grids.front(), patch);

  DecoderInputGrads out;
  out.d_features.channels = features.channels;
  out.d_features.grids = features.grids;
  out.d_features.maps.resize(frames);
  for (std::size_t t = 0; t < frames; ++t)
    for (const auto& m : features.maps[t]) out.d_features.maps[t].push_back(Tensor::zeros_like(m));

  std::vector<Tensor> d_frame(cfg.frame_video ? frames : 0);
  if (cfg.frame_video) {
    for (std::size_t t = 0; t < frames; ++t) {
      const Tensor& pix = features.maps[t].front();
      Tensor dg = up.backward(d_frame_logits[t]);
      Tensor de = matmul(dg, pix);
      out.d_features.maps[t].front() += matmul_tn(dg, cache.frame_heads[t].embedded);
      d_frame[t] = w.mask_head.backward(de, cache.frame_heads[t].mlp, grad.mask_head);
    }
  }
  Tensor de_video = Tensor::zeros_like(cache.video_head.embedded);
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor& pix = features.maps[t].front();
    Tensor dg = up.backward(d_video_logits[t]);
    de_video += matmul(dg, pix);
    out.d_features.maps[t].front() += matmul_tn(dg, cache.video_head.embedded);
  }
  Tensor d_video = w.mask_head.backward(de_video, cache.video_head.mlp, grad.mask_head);

  for (std::size_t l = layers; l-- > 0;) {
    if (cfg.frame_video) {
      const auto& aggs = cache.aggregates[l];
      if (cfg.strategy == AggregationStrategy::kFeatureFusion) {
        for (std::size_t t = 0; t < frames; ++t) d_frame[t] += d_video * (cfg.gamma / static_cast<double>(frames));
        d_video *= 1.0 - cfg.gamma;
      } else if (cfg.order == AggregationOrder::kStacked) {
        AggregateGrads g = video_frame_aggregate_backward(d_video, aggs.front(), cfg.gamma);
        d_video = std::move(g.d_video);
        const std::size_t n = d_frame.front().rows();
        for (std::size_t t = 0; t < frames; ++t) d_frame[t] += slice_rows(g.d_frame, t * n, n);
      } else {
        for (std::size_t t = frames; t-- > 0;) {
          AggregateGrads g = video_frame_aggregate_backward(d_video, aggs[t], cfg.gamma);
          d_video = std::move(g.d_video);
          d_frame[t] += g.d_frame;
        }
      }
    }
    const DecoderLayerCache& lc = cache.layers[l];
    const std::size_t level = lc.level;
    ScaleBlockGrads vg = scale_block_backward(w.layers[l].video, d_video, lc.video, cfg.scaled, grad.layers[l].video);
    d_video = std::move(vg.dq);
    const std::size_t cells = features.grids[level].cells();
    for (std::size_t t = 0; t < frames; ++t) out.d_features.maps[t][level] += slice_rows(vg.d_features, t * cells, cells);
    if (cfg.frame_video) {
      for (std::size_t t = 0; t < frames; ++t) {
        ScaleBlockGrads fg =
            scale_block_backward(w.layers[l].frame, d_frame[t], lc.frame[t], cfg.scaled, grad.layers[l].frame);
        d_frame[t] = std::move(fg.dq);
        out.d_features.maps[t][level] += fg.d_features;
      }
    }
  }
  out.d_queries.video = std::move(d_video);
  out.d_queries.frame = Tensor::zeros_like(out.d_queries.video);
  for (const auto& d : d_frame) out.d_queries.frame += d;
  return out;
}

std::vector<MaskTracklet> tracklets_from_logits(const std::vector<Tensor>& video_logits, std::size_t height,
                                                std::size_t width, double thr) {
  std::vector<MaskTracklet> out;
  if (video_logits.empty()) return out;
  const std::size_t frames = video_logits.size();
  const std::size_t tokens = video_logits.front().rows();
  for (std::size_t n = 0; n < tokens; ++n) {
    MaskTracklet m = MaskTracklet::empty(frames, height, width);
    m.token_index = n;
    m.logits.resize(frames * height * width);
    double prob_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      auto row = video_logits[t].row(n);
      for (std::size_t i = 0; i < height * width; ++i) {
        const double p = sigmoid(row[i]);
        m.logits[t * height * width + i] = row[i];
        if (p > thr) {
          m.masks[t * height * width + i] = 1;
          prob_sum += p;
          ++count;
        }
      }
    }
    m.confidence = count == 0 ? 0.0 : prob_sum / static_cast<double>(count);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace vidreason
