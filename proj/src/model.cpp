#include "vidreason/model.hpp"

#include <algorithm>
#include <span>

#include "vidreason/errors.hpp"
#include "vidreason/hungarian.hpp"

namespace vidreason {

void ModelConfig::validate() const {
  if (encoder.patch == 0 || encoder.channels == 0 || encoder.scales == 0) throw ConfigError("encoder sizes must be positive");
  if (encoder.channels % 2 != 0) throw ConfigError("channel count must be even for 2D position codes");
  if (decoder.layers == 0 || decoder.layers > encoder.scales) {
    throw ConfigError("decoder layers must lie in 1.." + std::to_string(encoder.scales));
  }
  if (cam.keep == 0 || cam.keep > cam.queries) throw ConfigError("CAM must keep between 1 and M rows");
  if (seg_tokens == 0) throw ConfigError("seg_tokens must be positive");
  if (!(decoder.gamma >= 0.0 && decoder.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (responder.heads != 1) throw ConfigError("only single-head attention is implemented");
  if (responder.hidden == 0 || responder.layers == 0) throw ConfigError("responder sizes must be positive");
}

ModelWeights ModelWeights::init(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 1));
  ModelWeights w;
  w.encoder = EncoderWeights::init(cfg.encoder, rng);
  w.cam = CamWeights::init(cfg.encoder.channels, rng);
  w.responder = ResponderWeights::init(cfg.responder, vocab.size(), cfg.seg_tokens, cfg.encoder.channels,
                                       cfg.encoder.channels, rng, derive_seed(seed, 2));
  w.decoder = DecoderWeights::init(cfg.decoder.layers, cfg.encoder.channels, rng);
  return w;
}

void ModelWeights::visit(const ParamVisitor& f) {
  encoder.visit("encoder", f);
  cam.visit("cam", f);
  responder.visit("responder", f);
  decoder.visit("decoder", f);
}

ModelWeights ModelWeights::zeros() const {
  ModelWeights g = *this;
  g.visit([](const std::string&, Tensor& t) { t.fill(0.0); });
  return g;
}

std::size_t ModelWeights::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

namespace {

std::vector<TokenId> padded_query(const std::string& query, const Vocabulary& vocab, std::size_t rows) {
  std::vector<TokenId> ids = vocab.encode_query(query);
  if (ids.size() > rows) {
    throw EncodingError("query '" + query + "' has " + std::to_string(ids.size()) + " content words, limit " +
                        std::to_string(rows));
  }
  ids.resize(rows, vocab.pad());
  return ids;
}

// Mean over frames of the coarsest map.
Tensor mean_top(const MultiScaleFeatures& f) {
  Tensor m = Tensor::zeros_like(f.top(0));
  for (std::size_t t = 0; t < f.frames(); ++t) m += f.top(t);
  m *= 1.0 / static_cast<double>(f.frames());
  return m;
}

struct Context {
  std::vector<CamCache> cam;
  std::vector<CondensedEmbeddings> rows;
};

Context build_context(const TextEmbeddings& x_txt, const MultiScaleFeatures& features, const ModelWeights& w,
                      const ModelConfig& cfg, bool keep_cache) {
  Context c;
  if (!cfg.cam_on) {
    CondensedEmbeddings all;
    all.rows = x_txt.rows;
    for (std::size_t i = 0; i < x_txt.rows.rows(); ++i) all.source_indices.push_back(i);
    c.rows.push_back(std::move(all));
    return c;
  }
  if (keep_cache) c.cam.resize(features.frames());
  for (std::size_t t = 0; t < features.frames(); ++t) {
    ContextAggregate agg = aggregate_context(x_txt, features.top(t), w.cam, cfg.cam, keep_cache ? &c.cam[t] : nullptr);
    const Tensor& scores = cfg.cam.score == ResponseScore::kMaxWeight ? agg.attention : agg.logits;
    c.rows.push_back(condense_top_k(agg.embeddings, scores, cfg.cam.keep));
  }
  return c;
}

std::span<const std::uint8_t> frame_span(const MaskTracklet& m, std::size_t t) {
  return std::span<const std::uint8_t>(m.masks).subspan(t * m.frame_pixels(), m.frame_pixels());
}

struct ScaleLoss {
  double ce = 0.0;
  double dice = 0.0;
};

// Matches N prediction rows against G targets. Matched pairs are averaged over
// G; unmatched rows are supervised toward an empty mask and averaged over N.
// Gradients of (ce_weight * ce + dice_weight * dice) are accumulated into `d_rows`.
ScaleLoss matched_loss(const std::vector<std::vector<double>>& rows, const std::vector<std::vector<std::uint8_t>>& targets,
                       double ce_weight, double dice_weight, std::vector<std::vector<double>>* d_rows) {
  const std::size_t n = rows.size();
  Tensor cost = Tensor::matrix(n, targets.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < targets.size(); ++g) cost(i, g) = mask_cost(rows[i], targets[g], ce_weight, dice_weight);
  const Assignment a = hungarian_match(cost);
  ScaleLoss out;
  const std::vector<std::uint8_t> empty(rows.empty() ? 0 : rows.front().size(), 0);
  const double inv_matched = 1.0 / static_cast<double>(std::max<std::size_t>(1, a.matched()));
  const double inv_rows = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& gt = a.pred_to_gt[i] ? targets[*a.pred_to_gt[i]] : empty;
    const double inv = a.pred_to_gt[i] ? inv_matched : inv_rows;
    MaskLossGrad ce = bce_loss_with_grad(rows[i], gt);
    MaskLossGrad dice = dice_loss_on_logits(rows[i], gt);
    out.ce += ce.value * inv;
    out.dice += dice.value * inv;
    if (d_rows != nullptr) {
      auto& d = (*d_rows)[i];
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += (ce_weight * ce.d_logits[k] + dice_weight * dice.d_logits[k]) * inv;
    }
  }
  return out;
}

}  // namespace

TextEmbeddings encode_text(const std::string& query, const Vocabulary& vocab, const ResponderWeights& w,
                           std::size_t rows) {
  const std::vector<TokenId> ids = padded_query(query, vocab, rows);
  TextEmbeddings out;
  out.rows = w.text_proj.forward(gather_rows(w.token_embed, ids));
  out.rows += position_codes_1d(rows, out.rows.cols());
  for (TokenId id : ids) out.tokens.push_back(vocab.symbol(id));
  return out;
}

void encode_text_backward(const Tensor& d_rows, const std::string& query, const Vocabulary& vocab,
                          const ResponderWeights& w, std::size_t rows, ResponderWeights& grad) {
  const std::vector<TokenId> ids = padded_query(query, vocab, rows);
  const Tensor d_embed = w.text_proj.backward(gather_rows(w.token_embed, ids), d_rows, grad.text_proj);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = d_embed.row(i);
    auto dst = grad.token_embed.row(ids[i]);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

LossReport model_loss(const QueryEpisode& ep, const ModelWeights& w, const ModelConfig& cfg, const Vocabulary& vocab,
                      const LossWeights& lw, ModelWeights* grad) {
  const VideoClip& clip = ep.clip;
  const bool train = grad != nullptr;
  EncoderCache enc_cache;
  const MultiScaleFeatures features = encode_frames(clip, cfg.encoder, w.encoder, train ? &enc_cache : nullptr);
  const TextEmbeddings x_txt = encode_text(ep.query, vocab, w.responder, cfg.cam.queries);
  const Tensor pooled_top = mean_top(features);
  const Tensor visual = project_visual(pooled_top, w.responder.visual_proj);
  const Context context = build_context(x_txt, features, w, cfg, train);
  const Tensor prefix = responder_prefix(visual, context.rows, w.responder);

  std::vector<TokenId> words;
  for (const auto& s : ep.answer) words.push_back(vocab.id(s));
  const std::vector<TokenId> tokens = answer_with_placeholders(words, vocab);
  ResponderCache resp_cache;
  const ResponderPass pass = responder_forward(prefix, tokens, w.responder, vocab, cfg.responder,
                                               train ? &resp_cache : nullptr);
  std::vector<TokenId> targets = tokens;
  targets.push_back(vocab.eos());
  const TextLoss txt = text_loss(pass.logits, targets);

  const std::size_t p = prefix.rows();
  const std::size_t first_seg = p + words.size();
  const std::size_t n_seg = 2 * cfg.seg_tokens;
  const Tensor seg_states = slice_rows(pass.hidden, first_seg, n_seg);
  const SegQueries queries = project_seg_tokens(seg_states, w.responder.phi);
  DecoderCache dec_cache;
  const DecoderOutput dec = run_decoder(queries, features, w.decoder, cfg.decoder, cfg.encoder.patch,
                                        train ? &dec_cache : nullptr);

  const std::size_t frames = clip.frames, hw = clip.height * clip.width, n = cfg.seg_tokens;
  const double ce_f = lw.ce_for_frame(), ce_v = lw.ce_for_video();

  // Video scale: one row per token spanning the whole clip.
  std::vector<std::vector<double>> v_rows(n, std::vector<double>(frames * hw));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      auto r = dec.video_logits[t].row(i);
      std::copy(r.begin(), r.end(), v_rows[i].begin() + static_cast<std::ptrdiff_t>(t * hw));
    }
  std::vector<std::vector<std::uint8_t>> v_targets;
  for (const auto& m : ep.tracklets) v_targets.push_back(m.masks);
  std::vector<std::vector<double>> dv_rows;
  if (train) dv_rows.assign(n, std::vector<double>(frames * hw, 0.0));
  const ScaleLoss video = matched_loss(v_rows, v_targets, ce_v, lw.dice, train ? &dv_rows : nullptr);

  LossReport report;
  report.parts.txt = txt.loss;
  report.parts.ce_v = video.ce;
  report.parts.dice_v = video.dice;

  std::vector<std::vector<std::vector<double>>> df_rows(frames);
  if (cfg.decoder.frame_video) {
    for (std::size_t t = 0; t < frames; ++t) {
      std::vector<std::vector<double>> rows(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto r = dec.frame_logits[t].row(i);
        rows[i].assign(r.begin(), r.end());
      }
      std::vector<std::vector<std::uint8_t>> tg;
      for (const auto& m : ep.tracklets) {
        auto s = frame_span(m, t);
        tg.emplace_back(s.begin(), s.end());
      }
      if (train) df_rows[t].assign(n, std::vector<double>(hw, 0.0));
      const ScaleLoss fl = matched_loss(rows, tg, ce_f, lw.dice, train ? &df_rows[t] : nullptr);
      report.parts.ce_f += fl.ce / static_cast<double>(frames);
      report.parts.dice_f += fl.dice / static_cast<double>(frames);
    }
  }
  report.total = total_loss(report.parts, lw);
  if (!train) return report;

  // Backward. Mask-row gradients already carry the ce/dice weights; apply
  // lambda_mask, the per-frame average and lambda_txt here.
  std::vector<Tensor> d_video_logits, d_frame_logits;
  for (std::size_t t = 0; t < frames; ++t) {
    Tensor dv = Tensor::matrix(n, hw);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < hw; ++k) dv(i, k) = lw.mask * dv_rows[i][t * hw + k];
    d_video_logits.push_back(std::move(dv));
    if (cfg.decoder.frame_video) {
      Tensor df = Tensor::matrix(n, hw);
      const double scale = lw.mask / static_cast<double>(frames);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < hw; ++k) df(i, k) = scale * df_rows[t][i][k];
      d_frame_logits.push_back(std::move(df));
    }
  }
  DecoderInputGrads dg = run_decoder_backward(d_frame_logits, d_video_logits, features, w.decoder, cfg.decoder,
                                              cfg.encoder.patch, dec_cache, grad->decoder);
  const Tensor d_seg = project_seg_tokens_backward(seg_states, dg.d_queries, w.responder.phi, grad->responder.phi);
  Tensor d_hidden = Tensor::zeros_like(pass.hidden);
  for (std::size_t i = 0; i < n_seg; ++i) {
    auto src = d_seg.row(i);
    auto dst = d_hidden.row(first_seg + i);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  const Tensor d_prefix = responder_backward(d_hidden, txt.d_logits * lw.txt, resp_cache, w.responder, vocab,
                                             grad->responder);

  MultiScaleFeatures& d_features = dg.d_features;
  const std::size_t vis_rows = visual.rows();
  const Tensor d_pooled = w.responder.visual_proj.backward(pooled_top, slice_rows(d_prefix, 0, vis_rows),
                                                           grad->responder.visual_proj);
  for (std::size_t t = 0; t < frames; ++t) d_features.maps[t].back() += d_pooled * (1.0 / static_cast<double>(frames));

  Tensor d_x_txt = Tensor::zeros_like(x_txt.rows);
  std::size_t row = vis_rows;
  for (std::size_t c = 0; c < context.rows.size(); ++c) {
    const CondensedEmbeddings& cond = context.rows[c];
    const std::size_t k = cond.rows.rows();
    const Tensor d_cond = w.responder.context_proj.backward(cond.rows, slice_rows(d_prefix, row, k),
                                                            grad->responder.context_proj);
    row += k;
    if (!cfg.cam_on) {
      d_x_txt += d_cond;
      continue;
    }
    const Tensor d_e = condense_top_k_backward(d_cond, cond.source_indices, cfg.cam.queries);
    CamInputGrads cg = aggregate_context_backward(d_e, context.cam[c], w.cam, cfg.cam, grad->cam);
    d_x_txt += cg.d_x_txt;
    d_features.maps[c].back() += cg.d_f_top;
  }
  encode_text_backward(d_x_txt, ep.query, vocab, w.responder, cfg.cam.queries, grad->responder);
  encode_frames_backward(d_features, cfg.encoder, w.encoder, enc_cache, grad->encoder);
  return report;
}

Prediction predict(const VideoClip& clip, const std::string& query, const ModelWeights& w, const ModelConfig& cfg,
                   const Vocabulary& vocab) {
  const MultiScaleFeatures features = encode_frames(clip, cfg.encoder, w.encoder);
  const TextEmbeddings x_txt = encode_text(query, vocab, w.responder, cfg.cam.queries);
  const Tensor visual = project_visual(mean_top(features), w.responder.visual_proj);
  const Context context = build_context(x_txt, features, w, cfg, false);
  const Tensor prefix = responder_prefix(visual, context.rows, w.responder);
  const Response r = generate_response_from_prefix(prefix, w.responder, vocab, cfg.responder);
  const SegQueries queries = project_seg_tokens(r.seg_states, w.responder.phi);
  const DecoderOutput dec = run_decoder(queries, features, w.decoder, cfg.decoder, cfg.encoder.patch);
  Prediction p;
  p.text_tokens = r.text_tokens;
  std::vector<TokenId> words;
  for (TokenId t : r.text_tokens)
    if (!vocab.is_placeholder(t) && t != vocab.eos()) words.push_back(t);
  p.text = vocab.decode(words);
  p.tracklets = tracklets_from_logits(dec.video_logits, clip.height, clip.width, cfg.decoder.mask_threshold);
  return p;
}

}  // namespace vidreason
