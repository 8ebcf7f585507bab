#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vidreason/decoder.hpp"

namespace vidreason {

/// IoU of two binary frames; 1 when both are empty.
double frame_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
/// Boundary F-measure of two H x W frames with 1-pixel tolerance; 1 when both are empty.
double frame_boundary_f(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t height,
                        std::size_t width);
/// Foreground cells 4-adjacent to background or the image edge.
std::vector<std::uint8_t> boundary_map(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width);

double region_similarity_J(const MaskTracklet& pred, const MaskTracklet& gt);
double contour_accuracy_F(const MaskTracklet& pred, const MaskTracklet& gt);

/// Intersection and union summed over frames before dividing.
double spatio_temporal_iou(const MaskTracklet& a, const MaskTracklet& b);

std::vector<double> ap_thresholds();

struct ApResult {
  double ap = 0.0;
  double ar = 0.0;
  std::vector<double> ap_per_threshold;
  std::vector<double> ar_per_threshold;

  double ap_at(double threshold) const;
};

struct DetectionSet {
  std::vector<MaskTracklet> preds;  // confidence read from MaskTracklet::confidence
  std::vector<MaskTracklet> gts;
};

inline constexpr std::size_t kMaxDetections = 100;

/// Youtube-VIS style AP/AR pooled over several clips. Predictions are ranked
/// globally by confidence (stable in input order); each is greedily matched
/// to the highest-IoU unused ground truth of its own clip.
ApResult tracklet_ap(std::span<const DetectionSet> sets);
ApResult tracklet_ap(const std::vector<MaskTracklet>& preds, const std::vector<MaskTracklet>& gts);

/// Area under the max-interpolated precision-recall curve for a ranked list of hits.
double interpolated_ap(const std::vector<bool>& hits, std::size_t num_gt);

double mc_accuracy(std::span<const std::size_t> chosen, std::span<const std::size_t> keys);

struct EpisodeScore {
  std::string id;
  double j = 0.0;
  double f = 0.0;
  std::size_t mc_chosen = 0;
  std::size_t mc_key = 0;
};

struct EvalResult {
  double j = 0.0;
  double f = 0.0;
  double jf_mean = 0.0;
  double ap = 0.0;
  double ar = 0.0;
  double ap50 = 0.0;
  double mc_accuracy = 0.0;
  std::vector<EpisodeScore> episodes;
};

/// Aggregates per-episode scores (sorted by id) and pooled detections.
EvalResult summarize(std::vector<EpisodeScore> episodes, std::span<const DetectionSet> detections);

}  // namespace vidreason
