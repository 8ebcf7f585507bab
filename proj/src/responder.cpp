#include "vidreason/responder.hpp"

#include <algorithm>
#include <cmath>

#include "vidreason/encoder.hpp"
#include "vidreason/errors.hpp"

namespace vidreason {

SegTokenBank build_seg_codebook(std::size_t tokens_per_scale, std::size_t width, std::uint64_t seed) {
  if (tokens_per_scale == 0) throw ConfigError("codebook needs at least one token per scale");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  SegTokenBank bank;
  bank.frame = random_uniform({tokens_per_scale, width}, rng, -bound, bound);
  bank.video = random_uniform({tokens_per_scale, width}, rng, -bound, bound);
  return bank;
}

ResponderWeights ResponderWeights::init(const ResponderConfig& cfg, std::size_t vocab, std::size_t seg_tokens,
                                        std::size_t visual_width, std::size_t decoder_width, Rng& rng,
                                        std::uint64_t codebook_seed) {
  if (cfg.heads != 1) throw ConfigError("the responder is single-head");
  if (cfg.layers == 0 || cfg.hidden == 0) throw ConfigError("responder needs at least one layer and width");
  const std::size_t d = cfg.hidden;
  ResponderWeights w;
  w.token_embed = random_normal({vocab, d}, rng, 1.0);
  w.bank = build_seg_codebook(seg_tokens, d, codebook_seed);
  w.visual_proj = Linear::init(visual_width, d, rng);
  w.context_proj = Linear::init(visual_width, d, rng);
  w.text_proj = Linear::init(d, visual_width, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    w.blocks.push_back(ResponderBlock{LayerNorm::init(d), AttentionLayer::init(d, rng), LayerNorm::init(d),
                                      FeedForward::init(d, cfg.ffn_hidden, d, rng)});
  }
  w.ln_final = LayerNorm::init(d);
  w.lm_head = Linear::init(d, vocab, rng);
  w.phi = Linear::init(d, decoder_width, rng);
  return w;
}

void ResponderWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".token_embed", token_embed);
  f(prefix + ".codebook.frame", bank.frame);
  f(prefix + ".codebook.video", bank.video);
  visual_proj.visit(prefix + ".visual_proj", f);
  context_proj.visit(prefix + ".context_proj", f);
  text_proj.visit(prefix + ".text_proj", f);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    blocks[l].ln1.visit(p + ".ln1", f);
    blocks[l].attn.visit(p + ".attn", f);
    blocks[l].ln2.visit(p + ".ln2", f);
    blocks[l].ffn.visit(p + ".ffn", f);
  }
  ln_final.visit(prefix + ".ln_final", f);
  lm_head.visit(prefix + ".lm_head", f);
  phi.visit(prefix + ".phi", f);
}

Tensor causal_mask(std::size_t length) {
  Tensor m = Tensor::matrix(length, length);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = 1.0;
  return m;
}

ResponderPass responder_forward(const Tensor& prefix, const std::vector<TokenId>& tokens,
                                const ResponderWeights& w, const Vocabulary& vocab, const ResponderConfig& cfg,
                                ResponderCache* cache) {
  const std::size_t d = w.token_embed.cols();
  const std::size_t p = prefix.rows();
  const std::size_t a = tokens.size();
  const std::size_t s = p + a;
  if (p == 0) throw ConfigError("responder needs at least one prefix row");
  if (prefix.cols() != d) {
    throw DimensionError("responder prefix " + shape_string(prefix.shape()) + " is not width " + std::to_string(d));
  }
  if (s > cfg.max_len) {
    throw ConfigError("responder sequence of " + std::to_string(s) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
  }
  Tensor x = Tensor::matrix(s, d);
  std::copy(prefix.storage().begin(), prefix.storage().end(), x.storage().begin());
  for (std::size_t i = 0; i < a; ++i) {
    if (tokens[i] >= vocab.size()) throw EncodingError("token id outside the vocabulary");
    auto src = vocab.is_placeholder(tokens[i]) ? w.bank.entry(vocab.placeholder_slot(tokens[i]))
                                               : w.token_embed.row(tokens[i]);
    std::copy(src.begin(), src.end(), x.row(p + i).begin());
  }
  x += position_codes_1d(s, d);
  const Tensor mask = causal_mask(s);
  if (cache != nullptr) {
    cache->prefix_rows = p;
    cache->tokens = tokens;
    cache->input = x;
    cache->blocks.assign(w.blocks.size(), {});
  }
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const ResponderBlock& b = w.blocks[l];
    ResponderCache::Block* bc = cache != nullptr ? &cache->blocks[l] : nullptr;
    if (bc != nullptr) bc->x_in = x;
    Tensor n1 = b.ln1.forward(x, bc != nullptr ? &bc->ln1 : nullptr);
    Tensor att = b.attn.forward(n1, n1, &mask, true, bc != nullptr ? &bc->attn : nullptr);
    x += att;
    if (bc != nullptr) bc->x_mid = x;
    Tensor n2 = b.ln2.forward(x, bc != nullptr ? &bc->ln2 : nullptr);
    x += b.ffn.forward(n2, bc != nullptr ? &bc->ffn : nullptr);
  }
  ResponderPass out;
  out.hidden = w.ln_final.forward(x, cache != nullptr ? &cache->ln_final : nullptr);
  out.logits = w.lm_head.forward(slice_rows(out.hidden, p - 1, a + 1));
  if (cache != nullptr) {
    cache->pre_final = std::move(x);
    cache->hidden = out.hidden;
  }
  return out;
}

Tensor responder_backward(const Tensor& d_hidden, const Tensor& d_logits, const ResponderCache& cache,
                          const ResponderWeights& w, const Vocabulary& vocab, ResponderWeights& grad) {
  const std::size_t p = cache.prefix_rows;
  const std::size_t a = cache.tokens.size();
  Tensor dh = d_hidden.empty() ? Tensor::zeros_like(cache.hidden) : d_hidden;
  if (!d_logits.empty()) {
    Tensor dh_rows = w.lm_head.backward(slice_rows(cache.hidden, p - 1, a + 1), d_logits, grad.lm_head);
    for (std::size_t i = 0; i < a + 1; ++i) {
      auto src = dh_rows.row(i);
      auto dst = dh.row(p - 1 + i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  }
  Tensor dx = w.ln_final.backward(dh, cache.ln_final, grad.ln_final);
  for (std::size_t l = w.blocks.size(); l-- > 0;) {
    const ResponderBlock& b = w.blocks[l];
    ResponderBlock& gb = grad.blocks[l];
    const ResponderCache::Block& bc = cache.blocks[l];
    Tensor dn2 = b.ffn.backward(dx, bc.ffn, gb.ffn);
    dx += b.ln2.backward(dn2, bc.ln2, gb.ln2);
    AttentionInputGrads ag = b.attn.backward(dx, bc.attn, true, gb.attn);
    ag.d_query_in += ag.d_kv_in;
    dx += b.ln1.backward(ag.d_query_in, bc.ln1, gb.ln1);
  }
  for (std::size_t i = 0; i < a; ++i) {
    const TokenId t = cache.tokens[i];
    auto dst = vocab.is_placeholder(t) ? grad.bank.entry(vocab.placeholder_slot(t)) : grad.token_embed.row(t);
    auto src = dx.row(p + i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
  return slice_rows(dx, 0, p);
}

Tensor responder_prefix(const Tensor& visual, std::span<const CondensedEmbeddings> context,
                        const ResponderWeights& w) {
  std::vector<Tensor> parts;
  parts.push_back(visual);
  for (const auto& c : context) parts.push_back(w.context_proj.forward(c.rows));
  return concat_rows(parts);
}

std::vector<TokenId> answer_with_placeholders(const std::vector<TokenId>& words, const Vocabulary& vocab) {
  std::vector<TokenId> out = words;
  for (std::size_t n = 0; n < vocab.seg_tokens(); ++n) out.push_back(vocab.seg_frame(n));
  for (std::size_t n = 0; n < vocab.seg_tokens(); ++n) out.push_back(vocab.seg_video(n));
  return out;
}

Response generate_response_from_prefix(const Tensor& prefix, const ResponderWeights& w, const Vocabulary& vocab,
                                       const ResponderConfig& cfg) {
  const std::size_t p = prefix.rows();
  const std::size_t seg = 2 * vocab.seg_tokens();
  const TokenId is_id = vocab.id("is");
  const TokenId are_id = vocab.id("are");
  // Minimal answer: "the is" followed by every placeholder.
  if (p + 2 + seg > cfg.max_len) {
    throw ConfigError("responder prefix of " + std::to_string(p) + " rows leaves no room for the answer");
  }
  std::vector<TokenId> tokens = {vocab.id("the")};
  bool terminated = false;
  for (std::size_t words = 0; words < cfg.max_answer_words; ++words) {
    if (p + tokens.size() + 2 + seg > cfg.max_len) break;
    ResponderPass pass = responder_forward(prefix, tokens, w, vocab, cfg);
    auto last = pass.logits.row(pass.logits.rows() - 1);
    const TokenId next = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == vocab.eos() || next == vocab.pad() || vocab.is_placeholder(next)) break;
    tokens.push_back(next);
    if (next == is_id || next == are_id) {
      terminated = true;
      break;
    }
  }
  if (!terminated) tokens.push_back(is_id);
  const std::size_t first_seg = p + tokens.size();
  tokens = answer_with_placeholders(tokens, vocab);
  ResponderPass pass = responder_forward(prefix, tokens, w, vocab, cfg);

  Response r;
  r.text_tokens = tokens;
  r.text_tokens.push_back(vocab.eos());
  r.seg_states = Tensor::matrix(seg, w.token_embed.cols());
  for (std::size_t i = 0; i < seg; ++i) {
    r.seg_positions.push_back(first_seg + i);
    auto src = pass.hidden.row(first_seg + i);
    std::copy(src.begin(), src.end(), r.seg_states.row(i).begin());
  }
  return r;
}

Response generate_response(const Tensor& visual, std::span<const CondensedEmbeddings> context,
                           const ResponderWeights& w, const Vocabulary& vocab, const ResponderConfig& cfg) {
  if (visual.cols() != cfg.hidden) {
    throw DimensionError("visual tokens " + shape_string(visual.shape()) + " are not responder width " +
                         std::to_string(cfg.hidden));
  }
  return generate_response_from_prefix(responder_prefix(visual, context, w), w, vocab, cfg);
}

SegQueries project_seg_tokens(const Tensor& seg_states, const Linear& phi) {
  if (seg_states.cols() != phi.weight.rows() || seg_states.rows() % 2 != 0) {
    throw DimensionError("segmentation states " + shape_string(seg_states.shape()) + " do not fit projection " +
                         shape_string(phi.weight.shape()));
  }
  const std::size_t n = seg_states.rows() / 2;
  Tensor q = phi.forward(seg_states);
  return SegQueries{slice_rows(q, 0, n), slice_rows(q, n, n)};
}

Tensor project_seg_tokens_backward(const Tensor& seg_states, const SegQueries& dq, const Linear& phi,
                                   Linear& grad) {
  const Tensor parts[] = {dq.frame, dq.video};
  return phi.backward(seg_states, concat_rows(parts), grad);
}

TextLoss text_loss(const Tensor& logits, const std::vector<TokenId>& targets) {
  if (logits.rows() != targets.size()) {
    throw DimensionError("text loss has " + std::to_string(logits.rows()) + " logit rows for " +
                         std::to_string(targets.size()) + " targets");
  }
  TextLoss out;
  out.d_logits = softmax_rows(logits);
  const double inv = 1.0 / static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= logits.cols()) throw EncodingError("target symbol outside the vocabulary");
    auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double v : r) sum += std::exp(v - mx);
    out.loss += (mx + std::log(sum) - r[targets[i]]) * inv;
    auto d = out.d_logits.row(i);
    d[targets[i]] -= 1.0;
    for (auto& v : d) v *= inv;
  }
  return out;
}

}  // namespace vidreason
