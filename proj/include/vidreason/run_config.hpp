#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vidreason/generator.hpp"
#include "vidreason/losses.hpp"
#include "vidreason/model.hpp"
#include "vidreason/optimizer.hpp"

namespace vidreason {

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t max_iters = 200;
  std::size_t batch_size = 4;
  std::size_t save_every = 0;  // 0: only at the end
  ModelConfig model;
  LossWeights loss;
  OptimizerConfig optimizer;
  GeneratorConfig generator;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Key-sorted JSON text. Ablation toggles live in their own section and are
/// not repeated in the module sections.
std::string to_json_text(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string config_digest(const RunConfig& cfg);

/// KEY=VAL. Bare keys name an ablation toggle (cam_on, vfdec_on,
/// aggregation_strategy, scale_count, residual_in_eq1); dotted keys address
/// any field, e.g. optimizer.lr=2e-5. VAL is parsed as JSON, else as a string.
RunConfig apply_override(const RunConfig& cfg, const std::string& assignment);

}  // namespace vidreason
