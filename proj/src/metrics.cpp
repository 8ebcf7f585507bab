#include "vidreason/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidreason/errors.hpp"

namespace vidreason {

namespace {

void check_same_shape(const MaskTracklet& a, const MaskTracklet& b) {
  if (a.frames != b.frames || a.height != b.height || a.width != b.width) {
    throw DimensionError("tracklet shapes differ: " + std::to_string(a.frames) + "x" + std::to_string(a.height) +
                         "x" + std::to_string(a.width) + " vs " + std::to_string(b.frames) + "x" +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

std::span<const std::uint8_t> frame_of(const MaskTracklet& m, std::size_t t) {
  return std::span<const std::uint8_t>(m.masks).subspan(t * m.frame_pixels(), m.frame_pixels());
}

bool any_set(std::span<const std::uint8_t> m) {
  return std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

// Fraction of `from` boundary cells with a `to` boundary cell within Chebyshev distance 1.
double matched_fraction(const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to, std::size_t h,
                        std::size_t w) {
  std::size_t total = 0, hit = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (from[y * w + x] == 0) continue;
      ++total;
      bool found = false;
      for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(h - 1, y + 1) && !found; ++yy)
        for (std::size_t xx = x > 0 ? x - 1 : 0; xx <= std::min(w - 1, x + 1) && !found; ++xx)
          found = to[yy * w + xx] != 0;
      hit += found;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double frame_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw DimensionError("frame sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] != 0) && (b[i] != 0);
    uni += (a[i] != 0) || (b[i] != 0);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> boundary_map(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw DimensionError("mask size does not match its frame");
  std::vector<std::uint8_t> out(mask.size(), 0);
  auto fg = [&](std::size_t y, std::size_t x) { return mask[y * width + x] != 0; };
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (!fg(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == height || x + 1 == width;
      if (edge || !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) out[y * width + x] = 1;
    }
  }
  return out;
}

double frame_boundary_f(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t height,
                        std::size_t width) {
  if (pred.size() != gt.size()) throw DimensionError("frame sizes differ");
  const bool p_any = any_set(pred), g_any = any_set(gt);
  if (!p_any && !g_any) return 1.0;
  if (!p_any || !g_any) return 0.0;
  const auto bp = boundary_map(pred, height, width);
  const auto bg = boundary_map(gt, height, width);
  const double precision = matched_fraction(bp, bg, height, width);
  const double recall = matched_fraction(bg, bp, height, width);
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

double region_similarity_J(const MaskTracklet& pred, const MaskTracklet& gt) {
  check_same_shape(pred, gt);
  if (pred.frames == 0) return 1.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.frames; ++t) sum += frame_iou(frame_of(pred, t), frame_of(gt, t));
  return sum / static_cast<double>(pred.frames);
}

double contour_accuracy_F(const MaskTracklet& pred, const MaskTracklet& gt) {
  check_same_shape(pred, gt);
  if (pred.frames == 0) return 1.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.frames; ++t)
    sum += frame_boundary_f(frame_of(pred, t), frame_of(gt, t), pred.height, pred.width);
  return sum / static_cast<double>(pred.frames);
}

double spatio_temporal_iou(const MaskTracklet& a, const MaskTracklet& b) {
  check_same_shape(a, b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    inter += (a.masks[i] != 0) && (b.masks[i] != 0);
    uni += (a.masks[i] != 0) || (b.masks[i] != 0);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> ap_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
  return t;
}

double ApResult::ap_at(double threshold) const {
  const auto t = ap_thresholds();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i] - threshold) < 1e-9) return ap_per_threshold.at(i);
  }
  throw ConfigError("no AP computed at IoU threshold " + std::to_string(threshold));
}

double interpolated_ap(const std::vector<bool>& hits, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = hits.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += hits[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    area += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return area;
}

ApResult tracklet_ap(std::span<const DetectionSet> sets) {
  struct Ranked {
    std::size_t set, pred;
    double confidence;
  };
  std::vector<Ranked> ranked;
  std::size_t num_gt = 0;
  // IoU tables per set, computed once.
  std::vector<std::vector<std::vector<double>>> iou(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto& set = sets[s];
    num_gt += set.gts.size();
    std::vector<std::size_t> order(set.preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return set.preds[a].confidence > set.preds[b].confidence;
    });
    if (order.size() > kMaxDetections) order.resize(kMaxDetections);
    for (std::size_t p : order) ranked.push_back({s, p, set.preds[p].confidence});
    iou[s].assign(set.preds.size(), std::vector<double>(set.gts.size(), 0.0));
    for (std::size_t p : order)
      for (std::size_t g = 0; g < set.gts.size(); ++g) iou[s][p][g] = spatio_temporal_iou(set.preds[p], set.gts[g]);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

  ApResult result;
  for (double thr : ap_thresholds()) {
    std::vector<std::vector<bool>> used(sets.size());
    for (std::size_t s = 0; s < sets.size(); ++s) used[s].assign(sets[s].gts.size(), false);
    std::vector<bool> hits;
    std::size_t tp = 0;
    for (const auto& r : ranked) {
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g = 0; g < sets[r.set].gts.size(); ++g) {
        const double v = iou[r.set][r.pred][g];
        if (!used[r.set][g] && v >= thr && v > best) {
          best = v;
          best_g = g;
        }
      }
      const bool hit = best >= 0.0;
      if (hit) {
        used[r.set][best_g] = true;
        ++tp;
      }
      hits.push_back(hit);
    }
    result.ap_per_threshold.push_back(interpolated_ap(hits, num_gt));
    result.ar_per_threshold.push_back(num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  const double n = static_cast<double>(result.ap_per_threshold.size());
  result.ap = std::accumulate(result.ap_per_threshold.begin(), result.ap_per_threshold.end(), 0.0) / n;
  result.ar = std::accumulate(result.ar_per_threshold.begin(), result.ar_per_threshold.end(), 0.0) / n;
  return result;
}

ApResult tracklet_ap(const std::vector<MaskTracklet>& preds, const std::vector<MaskTracklet>& gts) {
  const DetectionSet set{preds, gts};
  return tracklet_ap(std::span<const DetectionSet>(&set, 1));
}

double mc_accuracy(std::span<const std::size_t> chosen, std::span<const std::size_t> keys) {
  if (chosen.size() != keys.size()) {
    throw DimensionError("answer count " + std::to_string(chosen.size()) + " differs from key count " +
                         std::to_string(keys.size()));
  }
  if (keys.empty()) return 0.0;
  std::size_t right = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) right += chosen[i] == keys[i];
  return static_cast<double>(right) / static_cast<double>(keys.size());
}

EvalResult summarize(std::vector<EpisodeScore> episodes, std::span<const DetectionSet> detections) {
  std::sort(episodes.begin(), episodes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  EvalResult r;
  std::vector<std::size_t> chosen, keys;
  for (const auto& e : episodes) {
    r.j += e.j;
    r.f += e.f;
    chosen.push_back(e.mc_chosen);
    keys.push_back(e.mc_key);
  }
  if (!episodes.empty()) {
    r.j /= static_cast<double>(episodes.size());
    r.f /= static_cast<double>(episodes.size());
  }
  r.jf_mean = 0.5 * (r.j + r.f);
  r.mc_accuracy = mc_accuracy(chosen, keys);
  const ApResult ap = tracklet_ap(detections);
  r.ap = ap.ap;
  r.ar = ap.ar;
  r.ap50 = ap.ap_at(0.5);
  r.episodes = std::move(episodes);
  return r;
}

}  // namespace vidreason
