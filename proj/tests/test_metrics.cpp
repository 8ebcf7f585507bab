#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "support.hpp"
#include "vidreason/errors.hpp"
#include "vidreason/metrics.hpp"

using namespace vidreason;
using namespace vrtest;

namespace {

MaskTracklet from_frames(std::size_t h, std::size_t w, const std::vector<std::vector<std::uint8_t>>& frames,
                         double conf = 1.0) {
  MaskTracklet m = MaskTracklet::empty(frames.size(), h, w);
  for (std::size_t t = 0; t < frames.size(); ++t)
    std::copy(frames[t].begin(), frames[t].end(), m.masks.begin() + static_cast<std::ptrdiff_t>(t * h * w));
  m.confidence = conf;
  return m;
}

MaskTracklet random_tracklet(Rng& rng, std::size_t t, std::size_t h, std::size_t w, double density) {
  MaskTracklet m = MaskTracklet::empty(t, h, w);
  for (auto& v : m.masks) v = rng.uniform() < density;
  m.confidence = rng.uniform();
  return m;
}

MaskTracklet box(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t bh, std::size_t bw) {
  MaskTracklet m = MaskTracklet::empty(1, h, w);
  for (std::size_t y = y0; y < y0 + bh; ++y)
    for (std::size_t x = x0; x < x0 + bw; ++x) m.at(0, y, x) = 1;
  return m;
}

// Boundary by definition on a zero-padded copy, then matching by scanning all
// pixel pairs for Chebyshev distance at most one.
double brute_force_f(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g, int h, int w) {
  auto fg = [&](const std::vector<std::uint8_t>& m, int y, int x) {
    return y >= 0 && x >= 0 && y < h && x < w && m[static_cast<std::size_t>(y * w + x)] != 0;
  };
  auto boundary = [&](const std::vector<std::uint8_t>& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (fg(m, y, x) && (!fg(m, y - 1, x) || !fg(m, y + 1, x) || !fg(m, y, x - 1) || !fg(m, y, x + 1)))
          out.emplace_back(y, x);
    return out;
  };
  const auto bp = boundary(p), bg = boundary(g);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  auto frac = [](const auto& from, const auto& to) {
    double hit = 0;
    for (auto [y, x] : from)
      for (auto [yy, xx] : to)
        if (std::max(std::abs(y - yy), std::abs(x - xx)) <= 1) {
          hit += 1;
          break;
        }
    return hit / static_cast<double>(from.size());
  };
  const double pr = frac(bp, bg), rc = frac(bg, bp);
  return pr + rc == 0 ? 0.0 : 2 * pr * rc / (pr + rc);
}

}  // namespace

TEST_CASE("region similarity examples") {
  const auto a = from_frames(2, 2, {{1, 1, 0, 0}, {0, 1, 1, 0}});
  CHECK(region_similarity_J(a, a) == 1.0);
  const auto b = from_frames(2, 2, {{0, 0, 1, 1}, {1, 0, 0, 1}});
  CHECK(region_similarity_J(a, b) == 0.0);
  const auto c = from_frames(2, 2, {{0, 1, 1, 0}, {0, 0, 1, 1}});
  CHECK(region_similarity_J(a, c) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  const auto e = from_frames(2, 2, {{0, 0, 0, 0}});
  CHECK(region_similarity_J(e, e) == 1.0);
  CHECK_THROWS_AS(region_similarity_J(a, e), DimensionError);
}

TEST_CASE("contour accuracy examples") {
  const auto sq = box(8, 8, 2, 2, 3, 3);
  CHECK(contour_accuracy_F(sq, sq) == 1.0);
  CHECK(contour_accuracy_F(MaskTracklet::empty(1, 8, 8), sq) == 0.0);
  CHECK(contour_accuracy_F(MaskTracklet::empty(1, 8, 8), MaskTracklet::empty(1, 8, 8)) == 1.0);
  const auto shifted = box(8, 8, 2, 3, 3, 3);
  CHECK(contour_accuracy_F(shifted, sq) == doctest::Approx(brute_force_f(shifted.masks, sq.masks, 8, 8)).epsilon(1e-12));
  const auto far = box(8, 8, 2, 4, 4, 3);
  const double v = contour_accuracy_F(far, sq);
  CHECK(v == doctest::Approx(brute_force_f(far.masks, sq.masks, 8, 8)).epsilon(1e-12));
  CHECK(v > 0.0);
  CHECK(v < 1.0);
}

TEST_CASE("contour accuracy matches the brute-force matcher on random masks") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6);
    const auto p = random_tracklet(rng, 1, h, w, 0.5), g = random_tracklet(rng, 1, h, w, 0.5);
    CHECK(contour_accuracy_F(p, g) ==
          doctest::Approx(brute_force_f(p.masks, g.masks, static_cast<int>(h), static_cast<int>(w))).epsilon(1e-12));
  }
}

TEST_CASE("boundary cells touch background or the edge") {
  const auto sq = box(5, 5, 0, 0, 4, 4);
  const auto b = boundary_map(sq.masks, 5, 5);
  CHECK(b[0] == 1);
  CHECK(b[1 * 5 + 1] == 0);
  CHECK(b[2 * 5 + 2] == 0);
  CHECK(b[3 * 5 + 3] == 1);
  CHECK(std::accumulate(b.begin(), b.end(), 0) == 12);
}

TEST_CASE("tracklet AP examples") {
  const auto gt = from_frames(1, 5, {{1, 1, 1, 1, 1}});
  ApResult r = tracklet_ap({gt}, {gt});
  CHECK(r.ap == 1.0);
  CHECK(r.ar == 1.0);
  r = tracklet_ap({}, {gt});
  CHECK(r.ap == 0.0);
  CHECK(r.ar == 0.0);

  // IoU exactly 0.6 counts at the 0.60 threshold: 3 of 10 thresholds hit.
  const auto p1 = from_frames(1, 5, {{1, 1, 1, 0, 0}}, 0.9);
  const auto p2 = from_frames(1, 5, {{0, 0, 0, 0, 0}}, 0.8);
  r = tracklet_ap({p1, p2}, {gt});
  CHECK(r.ap == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(r.ar == doctest::Approx(0.3).epsilon(1e-12));
  const ApOracle o = brute_force_ap({DetectionSet{{p1, p2}, {gt}}});
  CHECK(r.ap == doctest::Approx(o.ap).epsilon(1e-12));
  CHECK(r.ap_at(0.5) == 1.0);
  CHECK(r.ap_at(0.65) == 0.0);
  CHECK_THROWS_AS(r.ap_at(0.52), ConfigError);
}

TEST_CASE("interpolated AP of a ranked hit list") {
  CHECK(interpolated_ap({true, false, true}, 2) == doctest::Approx(0.5 * 1.0 + 0.5 * 2.0 / 3).epsilon(1e-12));
  CHECK(interpolated_ap({false, true}, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(interpolated_ap({}, 3) == 0.0);
  CHECK(interpolated_ap({true}, 0) == 0.0);
}

TEST_CASE("tracklet AP equals the exhaustive evaluator on random scenarios") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DetectionSet> sets(1 + rng.below(2));
    for (auto& s : sets) {
      const std::size_t ng = rng.below(4), np = rng.below(5);
      for (std::size_t g = 0; g < ng; ++g) s.gts.push_back(random_tracklet(rng, 2, 3, 3, 0.4));
      for (std::size_t p = 0; p < np; ++p) {
        // half the predictions are noisy copies of a gt so that hits occur
        if (!s.gts.empty() && rng.uniform() < 0.5) {
          MaskTracklet m = s.gts[rng.below(s.gts.size())];
          for (auto& v : m.masks)
            if (rng.uniform() < 0.15) v = !v;
          m.confidence = rng.uniform();
          s.preds.push_back(m);
        } else {
          s.preds.push_back(random_tracklet(rng, 2, 3, 3, 0.4));
        }
      }
    }
    const ApResult r = tracklet_ap(sets);
    const ApOracle o = brute_force_ap(sets);
    CHECK(r.ap == doctest::Approx(o.ap).epsilon(1e-12));
    CHECK(r.ar == doctest::Approx(o.ar).epsilon(1e-12));
  }
}

TEST_CASE("a perfect top-confidence prediction never lowers AP") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<MaskTracklet> gts, preds;
    for (std::size_t g = 0; g < 1 + rng.below(3); ++g) gts.push_back(random_tracklet(rng, 2, 3, 3, 0.5));
    for (std::size_t p = 0; p < rng.below(4); ++p) preds.push_back(random_tracklet(rng, 2, 3, 3, 0.5));
    const double before = tracklet_ap(preds, gts).ap;
    // pick a gt that no existing prediction matches at the loosest threshold
    std::size_t target = gts.size();
    for (std::size_t g = 0; g < gts.size() && target == gts.size(); ++g) {
      bool matched = false;
      for (const auto& p : preds) matched = matched || spatio_temporal_iou(p, gts[g]) >= 0.5;
      if (!matched) target = g;
    }
    if (target == gts.size()) continue;
    MaskTracklet perfect = gts[target];
    perfect.confidence = 2.0;
    preds.push_back(perfect);
    CHECK(tracklet_ap(preds, gts).ap >= before);
  }
}

TEST_CASE("metrics stay in the unit interval and are repeatable") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_tracklet(rng, 3, 4, 4, 0.3), b = random_tracklet(rng, 3, 4, 4, 0.3);
    const double j = region_similarity_J(a, b), f = contour_accuracy_F(a, b);
    CHECK(j >= 0.0);
    CHECK(j <= 1.0);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(j == region_similarity_J(b, a));
    CHECK(f == contour_accuracy_F(a, b));
    const ApResult r = tracklet_ap({a}, {b});
    CHECK(r.ap >= 0.0);
    CHECK(r.ap <= 1.0);
    CHECK(r.ar >= 0.0);
    CHECK(r.ar <= 1.0);
    CHECK(tracklet_ap({a}, {b}).ap == r.ap);
  }
}

TEST_CASE("detections beyond the per-clip cap are ignored") {
  const auto gt = from_frames(1, 2, {{1, 1}});
  std::vector<MaskTracklet> preds(kMaxDetections, from_frames(1, 2, {{0, 0}}, 0.9));
  auto late = gt;
  late.confidence = 0.1;
  preds.push_back(late);
  CHECK(tracklet_ap(preds, {gt}).ar == 0.0);
  preds.pop_back();
  preds.back() = late;
  CHECK(tracklet_ap(preds, {gt}).ar == 1.0);
}

TEST_CASE("multiple-choice accuracy") {
  const std::vector<std::size_t> keys = {0, 1, 2, 3};
  CHECK(mc_accuracy(std::vector<std::size_t>{0, 1, 2, 3}, keys) == 1.0);
  CHECK(mc_accuracy(std::vector<std::size_t>{1, 0, 0, 0}, keys) == 0.0);
  CHECK(mc_accuracy(std::vector<std::size_t>{0, 1, 2, 0}, keys) == 0.75);
  CHECK_THROWS_AS(mc_accuracy(std::vector<std::size_t>{0}, keys), DimensionError);
}

TEST_CASE("summary averages episodes in id order") {
  std::vector<EpisodeScore> eps = {{"b", 0.5, 0.7, 1, 1}, {"a", 1.0, 0.9, 0, 2}};
  const auto gt = from_frames(1, 2, {{1, 0}});
  const std::vector<DetectionSet> det = {{{gt}, {gt}}};
  const EvalResult r = summarize(eps, det);
  CHECK(r.j == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.f == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.jf_mean == doctest::Approx(0.775).epsilon(1e-12));
  CHECK(r.mc_accuracy == 0.5);
  CHECK(r.ap == 1.0);
  CHECK(r.ap50 == 1.0);
  CHECK(r.episodes.front().id == "a");
}
