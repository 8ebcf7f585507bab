#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "vidreason/decoder.hpp"
#include "vidreason/errors.hpp"

using namespace vidreason;
using namespace vrtest;

namespace {

struct Setup {
  EncoderConfig enc{2, 8, 3};
  MultiScaleFeatures features;
  DecoderWeights w;
  SegQueries queries;
  explicit Setup(std::uint64_t seed, std::size_t frames = 2) {
    Rng rng(seed);
    VideoClip clip;
    clip.frames = frames;
    clip.height = clip.width = 16;
    clip.pixels.resize(frames * 16 * 16 * 3);
    for (double& v : clip.pixels) v = rng.uniform();
    const EncoderWeights ew = EncoderWeights::init(enc, rng);
    features = encode_frames(clip, enc, ew);
    w = DecoderWeights::init(3, 8, rng);
    queries.frame = rand_matrix(3, 8, rng);
    queries.video = rand_matrix(3, 8, rng);
  }
};

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor ln_ref(const Tensor& x, const LayerNorm& ln) {
  Tensor y = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (double v : x.row(i)) mean += v;
    mean /= static_cast<double>(x.cols());
    for (double v : x.row(i)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j)
      y(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * ln.gain(0, j) + ln.bias(0, j);
  }
  return y;
}

Tensor attn_ref(const AttentionLayer& a, const Tensor& qin, const Tensor& kv, const Tensor* mask) {
  const Tensor q = a.wq.forward(qin), k = a.wk.forward(kv), v = a.wv.forward(kv);
  return a.wo.forward(scaled_dot_attention(q, k, v, mask, true).out);
}

}  // namespace

TEST_CASE("aggregation worked example") {
  const Tensor qv = Tensor::from_rows({{1.0, 0.0}});
  const Tensor qf = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  const Tensor out = video_frame_aggregate(qv, qf, 0.03);
  const double e = std::exp(1.0);
  const double a0 = e / (e + 1.0), a1 = 1.0 / (e + 1.0);
  CHECK(out(0, 0) == doctest::Approx(0.03 * a0 + 0.97).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(0.03 * a1).epsilon(1e-14));
  CHECK(std::abs(out(0, 0) - 0.99193) <= 1e-5);
  CHECK(std::abs(out(0, 1) - 0.00807) <= 1e-5);
}

TEST_CASE("aggregation limits and errors") {
  Rng rng(1);
  const Tensor qv = rand_matrix(4, 5, rng), qf = rand_matrix(3, 5, rng);
  CHECK(video_frame_aggregate(qv, qf, 0.0) == qv);
  const Tensor one = rand_matrix(1, 5, rng);
  const Tensor out = video_frame_aggregate(qv, one, 1.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(out(i, j) == doctest::Approx(one(0, j)).epsilon(1e-15));
  CHECK_THROWS_AS(video_frame_aggregate(qv, qf, 1.5), ConfigError);
  CHECK_THROWS_AS(video_frame_aggregate(qv, qf, -0.1), ConfigError);
  CHECK_THROWS_AS(video_frame_aggregate(qv, rand_matrix(3, 4, rng), 0.5), DimensionError);
}

TEST_CASE("aggregation stays in the convex hull") {
  Rng rng(2);
  for (int draw = 0; draw < 1000; ++draw) {
    const std::size_t n = 1 + rng.below(5), m = 1 + rng.below(5), d = 1 + rng.below(6);
    const double gamma = rng.uniform();
    const Tensor qv = rand_matrix(n, d, rng, 3.0), qf = rand_matrix(m, d, rng, 3.0);
    const Tensor out = video_frame_aggregate(qv, qf, gamma);
    double row_bound = 0.0, qv_inf = 0.0;
    for (double v : qf.values()) row_bound = std::max(row_bound, std::abs(v));
    for (double v : qv.values()) qv_inf = std::max(qv_inf, std::abs(v));
    for (std::size_t j = 0; j < d; ++j) {
      double lo = qf(0, j), hi = qf(0, j);
      for (std::size_t r = 1; r < m; ++r) {
        lo = std::min(lo, qf(r, j));
        hi = std::max(hi, qf(r, j));
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double pulled = out(i, j) - (1.0 - gamma) * qv(i, j);
        CHECK(pulled >= gamma * lo - 1e-12);
        CHECK(pulled <= gamma * hi + 1e-12);
        CHECK(std::abs(out(i, j) - qv(i, j)) <= gamma * (qv_inf + row_bound) + 1e-12);
      }
    }
  }
}

TEST_CASE("masked attention zeroes weights outside the region") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor q = rand_matrix(3, 4, rng, 3.0), k = rand_matrix(6, 4, rng, 3.0), v = rand_matrix(6, 4, rng);
    Tensor mask = Tensor::matrix(3, 6);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 6; ++j) mask(i, j) = rng.uniform() < 0.4 ? 1.0 : 0.0;
      mask(i, rng.below(6)) = 1.0;
    }
    const AttentionResult r = scaled_dot_attention(q, k, v, &mask, true);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (mask(i, j) == 0.0) CHECK(r.weights(i, j) <= 1e-12);
        s += r.weights(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("unmasked fallback") {
  const Tensor m = Tensor::from_rows({{0, 1, 0}, {0, 0, 0}, {1, 1, 1}});
  const Tensor f = with_unmasked_fallback(m);
  CHECK(f == Tensor::from_rows({{0, 1, 0}, {1, 1, 1}, {1, 1, 1}}));
}

TEST_CASE("scale block matches the sublayer oracle") {
  Rng rng(4);
  const ScaleWeights w = ScaleWeights::init(6, rng);
  const Tensor q = rand_matrix(4, 6, rng), f = rand_matrix(5, 6, rng);
  Tensor mask = Tensor::from_rows({{1, 0, 0, 1, 0}, {0, 1, 1, 1, 1}, {1, 1, 1, 1, 1}, {0, 0, 1, 0, 0}});
  for (const Tensor* m : {static_cast<const Tensor*>(nullptr), static_cast<const Tensor*>(&mask)}) {
    Tensor x = q + attn_ref(w.cross, ln_ref(q, w.ln_cross), f, m);
    const Tensor n2 = ln_ref(x, w.ln_self);
    x = x + attn_ref(w.self, n2, n2, nullptr);
    Tensor h = w.ffn.fc1.forward(ln_ref(x, w.ln_ffn));
    for (double& v : h.values()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    x = x + w.ffn.fc2.forward(h);
    CHECK(max_abs_diff(scale_block_forward(w, q, f, m, true), x) <= 1e-12);
  }
  const Tensor ones(Shape{4, 5}, 1.0);
  CHECK(scale_block_forward(w, q, f, &ones, true) == scale_block_forward(w, q, f, nullptr, true));
}

TEST_CASE("decoder layer: no masks equals all-ones masks") {
  Setup s(5);
  DecoderState st;
  st.frame.assign(2, s.queries.frame);
  st.video = s.queries.video;
  std::vector<Tensor> feats{s.features.maps[0][2], s.features.maps[1][2]};
  const std::size_t cells = feats[0].rows();
  AttentionMasks ones;
  ones.frame.assign(2, Tensor(Shape{3, cells}, 1.0));
  ones.video = Tensor(Shape{3, 2 * cells}, 1.0);
  DecoderConfig cfg;
  const DecoderState a = decoder_layer(st, s.w.layers[0], feats, nullptr, cfg);
  const DecoderState b = decoder_layer(st, s.w.layers[0], feats, &ones, cfg);
  CHECK(a.frame[0] == b.frame[0]);
  CHECK(a.frame[1] == b.frame[1]);
  CHECK(a.video == b.video);
  CHECK(a.layer == 1);

  // frame queries only see their own frame
  std::vector<Tensor> other = feats;
  other[1] = other[1] * 2.0;
  const DecoderState c = decoder_layer(st, s.w.layers[0], other, nullptr, cfg);
  CHECK(c.frame[0] == a.frame[0]);
  CHECK_FALSE(c.frame[1] == a.frame[1]);
  CHECK_FALSE(c.video == a.video);
}

TEST_CASE("bilinear upsampler matches a direct oracle") {
  Rng rng(6);
  for (const auto& [grid, factor] : std::vector<std::pair<GridSize, std::size_t>>{
           {{2, 2}, 4}, {{3, 5}, 2}, {{4, 4}, 1}, {{1, 3}, 3}}) {
    const BilinearUpsampler up(grid, factor);
    const Tensor in = rand_matrix(2, grid.cells(), rng);
    const Tensor out = up.forward(in);
    const std::size_t h = grid.rows * factor, w = grid.cols * factor;
    REQUIRE(out.cols() == h * w);
    auto coord = [&](std::size_t o, std::size_t n) {
      double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      return std::clamp(src, 0.0, static_cast<double>(n - 1));
    };
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double sy = coord(y, grid.rows), sx = coord(x, grid.cols);
          const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
          const std::size_t y1 = std::min(y0 + 1, grid.rows - 1), x1 = std::min(x0 + 1, grid.cols - 1);
          const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
          auto g = [&](std::size_t a, std::size_t b) { return in(r, a * grid.cols + b); };
          const double want = (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) +
                              fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
          CHECK(out(r, y * w + x) == doctest::Approx(want).epsilon(1e-13));
        }
    // adjoint
    const Tensor d = rand_matrix(2, h * w, rng);
    CHECK(weighted_sum(out, d) == doctest::Approx(weighted_sum(in, up.backward(d))).epsilon(1e-12));
    if (factor == 1) CHECK(max_abs_diff(out, in) == 0.0);
  }
  CHECK_THROWS_AS(BilinearUpsampler({2, 2}, 2).forward(Tensor::matrix(1, 5)), DimensionError);
}

TEST_CASE("predict_masks examples") {
  Rng rng(7);
  const GridSize grid{2, 2};
  const BilinearUpsampler up(grid, 3);
  FeedForward mlp = FeedForward::init(4, 6, 4, rng);
  mlp.fc2.weight.fill(0.0);
  mlp.fc2.bias = Tensor::from_rows({{1, 0, 0, 0}});  // MLP(Q) = e0 for every query

  // orthogonal pixel features
  Tensor pix = Tensor::matrix(4, 4);
  for (std::size_t c = 0; c < 4; ++c) pix(c, 1 + c % 3) = rng.uniform(-1.0, 1.0);
  const Tensor q = rand_matrix(3, 4, rng);
  const MaskPrediction zero = predict_masks(q, pix, mlp, up);
  for (double v : zero.logits.values()) CHECK(sigmoid_ref(v) == 0.5);

  // every cell holds the unit feature e0
  Tensor unit = Tensor::matrix(4, 4);
  for (std::size_t c = 0; c < 4; ++c) unit(c, 0) = 1.0;
  const MaskPrediction one = predict_masks(q, unit, mlp, up);
  for (double v : one.logits.values()) CHECK(sigmoid_ref(v) == doctest::Approx(0.7311).epsilon(1e-4));

  // per-cell dot product oracle
  const FeedForward mlp2 = FeedForward::init(4, 6, 4, rng);
  const Tensor p2 = rand_matrix(4, 4, rng);
  MaskHeadCache cache;
  const MaskPrediction r = predict_masks(q, p2, mlp2, up, &cache);
  const Tensor e = mlp2.forward(q);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 4; ++j) dot += e(n, j) * p2(c, j);
      CHECK(r.grid_logits(n, c) == doctest::Approx(dot).epsilon(1e-13));
    }
  CHECK(r.logits == up.forward(r.grid_logits));
  CHECK_THROWS_AS(predict_masks(q, rand_matrix(4, 5, rng), mlp2, up), DimensionError);
}

TEST_CASE("empty cascade passes queries straight to the mask head") {
  Setup s(8);
  DecoderConfig cfg;
  cfg.layers = 0;
  const DecoderOutput out = run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch);
  const BilinearUpsampler up(s.features.grids.front(), s.enc.patch);
  REQUIRE(out.video_logits.size() == 2);
  for (std::size_t t = 0; t < 2; ++t) {
    const MaskPrediction p = predict_masks(s.queries.video, s.features.maps[t][0], s.w.mask_head, up);
    CHECK(max_abs_diff(out.video_logits[t], p.logits) <= 1e-13);
  }
  CHECK(out.final_state.video == s.queries.video);
}

TEST_CASE("gamma 0 decouples video queries from frame queries") {
  Setup s(9);
  DecoderConfig cfg;
  cfg.gamma = 0.0;
  SegQueries other = s.queries;
  Rng rng(10);
  other.frame = rand_matrix(3, 8, rng, 2.0);
  const DecoderOutput a = run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch);
  const DecoderOutput b = run_decoder(other, s.features, s.w, cfg, s.enc.patch);
  CHECK(a.final_state.video == b.final_state.video);
  for (std::size_t t = 0; t < 2; ++t) CHECK(a.video_logits[t] == b.video_logits[t]);
  CHECK_FALSE(a.frame_logits[0] == b.frame_logits[0]);

  cfg.gamma = 0.5;
  const DecoderOutput c = run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch);
  const DecoderOutput d = run_decoder(other, s.features, s.w, cfg, s.enc.patch);
  CHECK_FALSE(c.final_state.video == d.final_state.video);
}

TEST_CASE("decoder determinism and shapes") {
  Setup s(11, 3);
  for (auto strategy : {AggregationStrategy::kEmbeddingSimilarity, AggregationStrategy::kFeatureFusion})
    for (auto order : {AggregationOrder::kSequential, AggregationOrder::kStacked})
      for (bool fv : {true, false}) {
        DecoderConfig cfg;
        cfg.strategy = strategy;
        cfg.order = order;
        cfg.frame_video = fv;
        const DecoderOutput a = run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch);
        const DecoderOutput b = run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch);
        CHECK(a.frame_logits.size() == (fv ? 3u : 0u));
        REQUIRE(a.video_logits.size() == 3);
        CHECK(a.video_logits[0].rows() == 3);
        CHECK(a.video_logits[0].cols() == 16 * 16);
        const auto ta = tracklets_from_logits(a.video_logits, 16, 16, cfg.mask_threshold);
        const auto tb = tracklets_from_logits(b.video_logits, 16, 16, cfg.mask_threshold);
        CHECK(ta == tb);
        for (const auto& v : a.video_logits) CHECK(all_finite(v));
      }
}

TEST_CASE("decoder config errors") {
  Setup s(12);
  DecoderConfig cfg;
  cfg.layers = 4;
  CHECK_THROWS_AS(run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch), ConfigError);
  cfg.layers = 3;
  cfg.gamma = 1.2;
  CHECK_THROWS_AS(run_decoder(s.queries, s.features, s.w, cfg, s.enc.patch), ConfigError);
}

TEST_CASE("tracklets from logits") {
  Tensor l0 = Tensor::from_rows({{2.0, -1.0, 0.0, 3.0}, {-5, -5, -5, -5}});
  Tensor l1 = Tensor::from_rows({{-2.0, 1.0, 0.5, -3.0}, {-5, -5, -5, -5}});
  const auto ts = tracklets_from_logits({l0, l1}, 2, 2, 0.5);
  REQUIRE(ts.size() == 2);
  const MaskTracklet& a = ts[0];
  CHECK(a.token_index == 0);
  CHECK(a.frames == 2);
  CHECK(a.masks == std::vector<std::uint8_t>{1, 0, 0, 1, 0, 1, 1, 0});
  const double want = (sigmoid_ref(2) + sigmoid_ref(3) + sigmoid_ref(1) + sigmoid_ref(0.5)) / 4.0;
  CHECK(a.confidence == doctest::Approx(want).epsilon(1e-14));
  CHECK(a.area() == 4);
  CHECK(ts[1].confidence == 0.0);
  CHECK(ts[1].area() == 0);
  CHECK(tracklets_from_logits({}, 2, 2, 0.5).empty());
}
