#pragma once

#include <string>
#include <vector>

#include "vidreason/layers.hpp"

namespace vidreason {

/// How the "response" of a text query is read off the attention matrix.
enum class ResponseScore {
  kMaxWeight,  // row maximum of the softmax weights
  kMaxLogit,   // row maximum of the pre-softmax logits
};

struct CamConfig {
  std::size_t queries = 8;  // M
  std::size_t keep = 4;     // K
  ResponseScore score = ResponseScore::kMaxWeight;
  bool residual = false;
  bool scaled = true;

  bool operator==(const CamConfig&) const = default;
};

struct TextEmbeddings {
  Tensor rows;  // M x C
  std::vector<std::string> tokens;
};

struct CondensedEmbeddings {
  Tensor rows;  // K x C
  std::vector<std::size_t> source_indices;
};

struct CamWeights {
  FeedForward ffn;

  static CamWeights init(std::size_t channels, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct ContextAggregate {
  Tensor embeddings;  // E_t, M x C
  Tensor attention;   // M x N softmax weights
  Tensor logits;      // M x N pre-softmax
};

struct CamCache {
  Tensor x_txt;
  Tensor f_top;
  Tensor attended;
  FeedForwardCache ffn;
};

struct CamInputGrads {
  Tensor d_x_txt;
  Tensor d_f_top;
};

/// E_t = FFN(CrossAttn(x_txt, F, F)); query is text, key and value are visual.
ContextAggregate aggregate_context(const TextEmbeddings& x_txt, const Tensor& f_top, const CamWeights& w,
                                   const CamConfig& cfg, CamCache* cache = nullptr);
CamInputGrads aggregate_context_backward(const Tensor& d_embeddings, const CamCache& cache, const CamWeights& w,
                                         const CamConfig& cfg, CamWeights& grad);

/// Keeps the K rows with the largest row-maximum score (ties to the smaller
/// index), returned verbatim in ascending index order.
CondensedEmbeddings condense_top_k(const Tensor& embeddings, const Tensor& scores, std::size_t keep);

/// Scatters a gradient on condensed rows back to the full M x C layout.
Tensor condense_top_k_backward(const Tensor& d_condensed, const std::vector<std::size_t>& source_indices,
                               std::size_t total_rows);

}  // namespace vidreason
