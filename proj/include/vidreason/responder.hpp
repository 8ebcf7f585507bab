#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vidreason/context_aggregation.hpp"
#include "vidreason/layers.hpp"
#include "vidreason/vocabulary.hpp"

namespace vidreason {

/// Codebook of segmentation tokens: N per scale, frame scale and video scale.
struct SegTokenBank {
  Tensor frame;  // N x d
  Tensor video;  // N x d

  std::size_t tokens_per_scale() const { return frame.rows(); }
  std::size_t width() const { return frame.cols(); }
  /// Row `slot` of the 2N codebook, frame scale first.
  std::span<const double> entry(std::size_t slot) const {
    return slot < frame.rows() ? frame.row(slot) : video.row(slot - frame.rows());
  }
  std::span<double> entry(std::size_t slot) {
    return slot < frame.rows() ? frame.row(slot) : video.row(slot - frame.rows());
  }
};

/// Entries i.i.d. uniform in [-1/sqrt(d), 1/sqrt(d)] from the seeded generator.
SegTokenBank build_seg_codebook(std::size_t tokens_per_scale, std::size_t width, std::uint64_t seed);

struct ResponderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 1;
  std::size_t max_len = 64;
  std::size_t ffn_hidden = 128;
  std::size_t max_answer_words = 3;

  bool operator==(const ResponderConfig&) const = default;
};

struct ResponderBlock {
  LayerNorm ln1;
  AttentionLayer attn;
  LayerNorm ln2;
  FeedForward ffn;
};

/// The stand-in language model: a pre-norm causal transformer over projected
/// visual tokens, condensed context rows and answer tokens.
struct ResponderWeights {
  Tensor token_embed;  // V x d
  SegTokenBank bank;
  Linear visual_proj;   // C -> d
  Linear context_proj;  // C -> d
  Linear text_proj;     // d -> C, maps token-table rows to the text-encoder width
  std::vector<ResponderBlock> blocks;
  LayerNorm ln_final;
  Linear lm_head;  // d -> V
  Linear phi;      // d -> d_dec

  static ResponderWeights init(const ResponderConfig& cfg, std::size_t vocab, std::size_t seg_tokens,
                               std::size_t visual_width, std::size_t decoder_width, Rng& rng,
                               std::uint64_t codebook_seed);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct ResponderCache {
  std::size_t prefix_rows = 0;
  std::vector<TokenId> tokens;
  Tensor input;
  struct Block {
    Tensor x_in;
    LayerNormCache ln1;
    Tensor ln1_out;
    AttentionCache attn;
    Tensor x_mid;
    LayerNormCache ln2;
    FeedForwardCache ffn;
  };
  std::vector<Block> blocks;
  Tensor pre_final;
  LayerNormCache ln_final;
  Tensor hidden;
};

struct ResponderPass {
  Tensor hidden;  // (P + A) x d, final-normalized states
  Tensor logits;  // (A + 1) x V, row i predicts token i (row A predicts the terminator)
};

/// One causal pass over [prefix rows] + [embedded tokens]. Placeholder tokens
/// are embedded from the codebook, all others from the token table.
ResponderPass responder_forward(const Tensor& prefix, const std::vector<TokenId>& tokens,
                                const ResponderWeights& w, const Vocabulary& vocab, const ResponderConfig& cfg,
                                ResponderCache* cache = nullptr);
/// Backward of responder_forward; accumulates into `grad` and returns dL/dprefix.
Tensor responder_backward(const Tensor& d_hidden, const Tensor& d_logits, const ResponderCache& cache,
                          const ResponderWeights& w, const Vocabulary& vocab, ResponderWeights& grad);

Tensor causal_mask(std::size_t length);

struct Response {
  std::vector<TokenId> text_tokens;      // y_out, ends with <eos>
  std::vector<std::size_t> seg_positions;  // sequence positions of the 2N placeholders
  Tensor seg_states;                     // 2N x d, frame scale first
};

/// Concatenates the projected visual tokens and the per-frame condensed
/// context (projected to width d) in frame order.
Tensor responder_prefix(const Tensor& visual, std::span<const CondensedEmbeddings> context,
                        const ResponderWeights& w);

/// Teacher-forced answer tokens: the answer words followed by every placeholder.
std::vector<TokenId> answer_with_placeholders(const std::vector<TokenId>& words, const Vocabulary& vocab);

/// Greedy decode after the template prefix "the", then the placeholders (frame
/// scale, then video scale) and <eos>.
Response generate_response(const Tensor& visual, std::span<const CondensedEmbeddings> context,
                           const ResponderWeights& w, const Vocabulary& vocab, const ResponderConfig& cfg);
/// Same, from an already assembled prefix.
Response generate_response_from_prefix(const Tensor& prefix, const ResponderWeights& w, const Vocabulary& vocab,
                                       const ResponderConfig& cfg);

struct SegQueries {
  Tensor frame;  // Q^f, N x d_dec
  Tensor video;  // Q^v, N x d_dec
};

/// Phi applied to the emitted segmentation states.
SegQueries project_seg_tokens(const Tensor& seg_states, const Linear& phi);
/// Backward of project_seg_tokens; returns dL/dseg_states.
Tensor project_seg_tokens_backward(const Tensor& seg_states, const SegQueries& dq, const Linear& phi,
                                   Linear& grad);

struct TextLoss {
  double loss = 0.0;
  Tensor d_logits;
};

/// Mean cross-entropy of logits rows against the target ids.
TextLoss text_loss(const Tensor& logits, const std::vector<TokenId>& targets);

}  // namespace vidreason
