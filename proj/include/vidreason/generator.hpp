#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidreason/scene.hpp"

namespace vidreason {

struct GeneratorConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 8;
  std::size_t min_instances = 2;
  std::size_t max_instances = 5;
  double min_size = 4.0;
  double max_size = 9.0;
  double circular_fraction = 0.3;
  std::size_t episodes = 100;
  std::array<double, 3> ratios = {0.52, 0.21, 0.27};
  // relative sampling weight per query family: color, shape, motion, relational
  std::map<std::string, double> template_weights = {
      {"color", 1.0}, {"shape", 1.0}, {"motion", 1.0}, {"relational", 1.0}};
  std::size_t max_retries = 200;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct MultipleChoice {
  std::string question;
  std::vector<std::string> options;
  std::size_t key = 0;

  bool operator==(const MultipleChoice&) const = default;
};

struct QueryEpisode {
  std::string id;
  VideoClip clip;
  SceneSpec scene;
  std::string family;
  std::string query;
  std::vector<std::uint32_t> target_ids;     // ascending
  std::vector<MaskTracklet> tracklets;       // one per target, same order
  MultipleChoice mc;
  std::vector<std::string> answer;           // answer words before placeholders
};

struct QueryTemplate {
  std::string family;
  std::string text;
  // Instances the phrase denotes, or nullopt when the scene makes it ambiguous or empty.
  std::function<std::optional<std::vector<std::uint32_t>>(const SceneSpec&)> predicate;
};

const std::vector<QueryTemplate>& query_templates();
const QueryTemplate& find_template(const std::string& text);

/// Net displacement between the first and last frame.
std::array<double, 2> net_displacement(const InstanceSpec& inst, std::size_t frames);
/// Mean per-frame displacement length.
double mean_speed(const InstanceSpec& inst, std::size_t frames);
/// True when the instance's coverage never intersects another instance's coverage.
bool never_overlaps(const SceneSpec& scene, const InstanceSpec& inst);

SceneSpec sample_scene(Rng& rng, const GeneratorConfig& cfg);

inline constexpr const char* kNotSure = "not sure";

QueryEpisode generate_episode(std::uint64_t seed, const GeneratorConfig& cfg, const std::string& id);

/// Deterministic split of ids: every split but the last takes floor(n * ratio),
/// the last takes the remainder. ids are shuffled with `seed` first.
std::vector<std::vector<std::string>> split_ids(std::vector<std::string> ids, const std::array<double, 3>& ratios,
                                                std::uint64_t seed);

}  // namespace vidreason
