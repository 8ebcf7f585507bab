#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vidreason/context_aggregation.hpp"
#include "vidreason/decoder.hpp"
#include "vidreason/encoder.hpp"
#include "vidreason/generator.hpp"
#include "vidreason/losses.hpp"
#include "vidreason/responder.hpp"
#include "vidreason/vocabulary.hpp"

namespace vidreason {

struct ModelConfig {
  EncoderConfig encoder;
  CamConfig cam;
  ResponderConfig responder;
  DecoderConfig decoder;
  std::size_t seg_tokens = 4;  // N per scale
  bool cam_on = true;          // off: the M text rows go to the responder once, uncondensed

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ModelWeights {
  EncoderWeights encoder;
  CamWeights cam;
  ResponderWeights responder;
  DecoderWeights decoder;

  static ModelWeights init(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed);
  /// Same structure, every entry zero.
  ModelWeights zeros() const;
  void visit(const ParamVisitor& f);
  std::size_t parameter_count();
};

/// x_txt: token-table rows of the filtered query, padded to M with <pad>,
/// mapped to width C, plus 1D position codes.
TextEmbeddings encode_text(const std::string& query, const Vocabulary& vocab, const ResponderWeights& w,
                           std::size_t rows);
/// Accumulates dL/dx_txt into the token table and text projection.
void encode_text_backward(const Tensor& d_rows, const std::string& query, const Vocabulary& vocab,
                          const ResponderWeights& w, std::size_t rows, ResponderWeights& grad);

struct LossReport {
  LossComponents parts;
  double total = 0.0;
};

/// Teacher-forced forward pass, matched losses and, when `grad` is given,
/// accumulation of dL/dweights.
LossReport model_loss(const QueryEpisode& ep, const ModelWeights& w, const ModelConfig& cfg, const Vocabulary& vocab,
                      const LossWeights& lw, ModelWeights* grad = nullptr);

struct Prediction {
  std::vector<TokenId> text_tokens;
  std::string text;
  std::vector<MaskTracklet> tracklets;  // one per video token
};

Prediction predict(const VideoClip& clip, const std::string& query, const ModelWeights& w, const ModelConfig& cfg,
                   const Vocabulary& vocab);

}  // namespace vidreason
