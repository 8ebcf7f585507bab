#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vidreason/encoder.hpp"
#include "vidreason/layers.hpp"
#include "vidreason/responder.hpp"

namespace vidreason {

/// How video embeddings absorb frame embeddings after each decoder layer.
enum class AggregationStrategy {
  kEmbeddingSimilarity,  // gamma * softmax(Qv Qf^T) Qf + (1 - gamma) Qv
  kFeatureFusion,        // gamma * mean_t(Qf) + (1 - gamma) Qv
};

enum class AggregationOrder {
  kSequential,  // one update per frame, in frame order
  kStacked,     // one update against all frames' tokens stacked
};

struct DecoderConfig {
  std::size_t layers = 3;
  double gamma = 0.03;
  double mask_threshold = 0.5;
  bool frame_video = true;  // frame-scale tokens plus aggregation; off = video tokens only
  AggregationStrategy strategy = AggregationStrategy::kEmbeddingSimilarity;
  AggregationOrder order = AggregationOrder::kSequential;
  bool masked_attention = true;
  bool scaled = true;

  bool operator==(const DecoderConfig&) const = default;
};

/// A binary mask sequence for one instance, T x H x W, optionally with logits.
struct MaskTracklet {
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<std::uint8_t> masks;
  std::vector<double> logits;
  double confidence = 1.0;
  std::size_t token_index = 0;
  std::uint32_t instance_id = 0;

  static MaskTracklet empty(std::size_t t, std::size_t h, std::size_t w) {
    MaskTracklet m;
    m.frames = t;
    m.height = h;
    m.width = w;
    m.masks.assign(t * h * w, 0);
    return m;
  }
  std::size_t frame_pixels() const { return height * width; }
  std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const { return masks[(t * height + y) * width + x]; }
  std::uint8_t& at(std::size_t t, std::size_t y, std::size_t x) { return masks[(t * height + y) * width + x]; }
  std::size_t area() const;
  bool operator==(const MaskTracklet&) const = default;
};

struct ScaleWeights {
  LayerNorm ln_cross;
  AttentionLayer cross;
  LayerNorm ln_self;
  AttentionLayer self;
  LayerNorm ln_ffn;
  FeedForward ffn;

  static ScaleWeights init(std::size_t width, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct DecoderLayerWeights {
  ScaleWeights frame;
  ScaleWeights video;
};

struct DecoderWeights {
  std::vector<DecoderLayerWeights> layers;
  FeedForward mask_head;  // 2-layer MLP applied to queries before the pixel dot product

  static DecoderWeights init(std::size_t layers, std::size_t width, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct DecoderState {
  std::vector<Tensor> frame;  // T entries of N x d
  Tensor video;               // N x d
  std::size_t layer = 0;
};

/// Binary cross-attention masks over a layer's feature tokens (1 = attend).
struct AttentionMasks {
  std::vector<Tensor> frame;  // per frame, N x cells
  Tensor video;               // N x (T * cells)
};

struct ScaleBlockCache {
  LayerNormCache ln_cross, ln_self, ln_ffn;
  AttentionCache cross, self;
  FeedForwardCache ffn;
};

struct ScaleBlockGrads {
  Tensor dq;
  Tensor d_features;
};

/// Q <- Q + CA(LN(Q), F); Q <- Q + SA(LN(Q)); Q <- Q + FFN(LN(Q)).
Tensor scale_block_forward(const ScaleWeights& w, const Tensor& q, const Tensor& features, const Tensor* mask,
                           bool scaled, ScaleBlockCache* cache = nullptr);
ScaleBlockGrads scale_block_backward(const ScaleWeights& w, const Tensor& dy, const ScaleBlockCache& cache,
                                     bool scaled, ScaleWeights& grad);

/// Replaces all-zero rows of a binary mask with all-ones rows (unmasked fallback).
Tensor with_unmasked_fallback(const Tensor& mask);

struct DecoderLayerCache {
  std::vector<ScaleBlockCache> frame;
  ScaleBlockCache video;
  std::size_t level = 0;
};

/// One layer of both scales. Frame queries of frame t attend to frame t only;
/// video queries attend to every frame's tokens concatenated.
DecoderState decoder_layer(const DecoderState& state, const DecoderLayerWeights& w,
                           const std::vector<Tensor>& level_features, const AttentionMasks* prev_masks,
                           const DecoderConfig& cfg, DecoderLayerCache* cache = nullptr);

struct AggregateCache {
  Tensor q_video;
  Tensor q_frame;
  Tensor weights;
};

/// Momentum aggregation of frame embeddings into video embeddings.
Tensor video_frame_aggregate(const Tensor& q_video, const Tensor& q_frame, double gamma,
                             AggregateCache* cache = nullptr);
struct AggregateGrads {
  Tensor d_video;
  Tensor d_frame;
};
AggregateGrads video_frame_aggregate_backward(const Tensor& d_out, const AggregateCache& cache, double gamma);

/// Bilinear (half-pixel centred) upsampling from a grid to factor x the size.
class BilinearUpsampler {
 public:
  BilinearUpsampler(GridSize grid, std::size_t factor);
  std::size_t out_rows() const { return grid_.rows * factor_; }
  std::size_t out_cols() const { return grid_.cols * factor_; }
  /// in: R x cells, out: R x (out_rows * out_cols)
  Tensor forward(const Tensor& in) const;
  Tensor backward(const Tensor& d_out) const;

 private:
  struct Tap {
    std::size_t lo, hi;
    double w_hi;
  };
  GridSize grid_;
  std::size_t factor_;
  std::vector<Tap> row_taps_, col_taps_;
};

struct MaskPrediction {
  Tensor grid_logits;  // N x cells
  Tensor logits;       // N x H*W
};

struct MaskHeadCache {
  FeedForwardCache mlp;
  Tensor embedded;  // MLP(Q)
};

/// logit(n, y, x) = MLP(Q_n) . pixel_feature(y, x), bilinearly upsampled.
/// `pixel_features` is one frame's finest map.
MaskPrediction predict_masks(const Tensor& q, const Tensor& pixel_features, const FeedForward& mlp,
                             const BilinearUpsampler& up, MaskHeadCache* cache = nullptr);

struct DecoderCache {
  std::vector<DecoderLayerCache> layers;
  std::vector<std::vector<AggregateCache>> aggregates;  // per layer, per update
  std::vector<Tensor> frame_final;                        // per frame, N x d
  Tensor video_final;
  std::vector<MaskHeadCache> frame_heads;  // per frame
  MaskHeadCache video_head;
};

struct DecoderOutput {
  std::vector<Tensor> frame_logits;  // per frame, N x H*W (empty when frame scale is off)
  std::vector<Tensor> video_logits;  // per frame, N x H*W
  DecoderState final_state;
};

/// The full cascade: one layer per scale, coarse to fine, each followed by the
/// video-frame aggregation whose output feeds the next layer.
DecoderOutput run_decoder(const SegQueries& queries, const MultiScaleFeatures& features, const DecoderWeights& w,
                          const DecoderConfig& cfg, std::size_t patch, DecoderCache* cache = nullptr);

struct DecoderInputGrads {
  SegQueries d_queries;
  MultiScaleFeatures d_features;
};

DecoderInputGrads run_decoder_backward(const std::vector<Tensor>& d_frame_logits,
                                       const std::vector<Tensor>& d_video_logits, const MultiScaleFeatures& features,
                                       const DecoderWeights& w, const DecoderConfig& cfg, std::size_t patch,
                                       const DecoderCache& cache, DecoderWeights& grad);

/// Thresholded tracklets from video-token logits; confidence is the mean
/// foreground probability inside the predicted mask (0 when empty).
std::vector<MaskTracklet> tracklets_from_logits(const std::vector<Tensor>& video_logits, std::size_t height,
                                                std::size_t width, double threshold);

}  // namespace vidreason
