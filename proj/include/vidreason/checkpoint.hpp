#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vidreason/model.hpp"
#include "vidreason/optimizer.hpp"

namespace vidreason {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t iteration = 0;
  std::string config_digest;
  std::string config_json;
  std::vector<std::string> vocabulary;
  std::vector<std::pair<std::string, Tensor>> params;
  AdamState adam;

  bool operator==(const Checkpoint&) const = default;
};

/// Snapshot of the weights in visit order.
Checkpoint make_checkpoint(ModelWeights& w, const AdamState& adam, std::uint64_t iteration, std::string config_json,
                           std::string config_digest, const Vocabulary& vocab);
/// Copies parameters into `w` by name; any missing, extra or reshaped entry is a FormatError.
void restore_weights(const Checkpoint& ck, ModelWeights& w);

/// Little-endian: magic, version, iteration, digest, config, vocabulary, named f64 arrays, Adam moments.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vidreason
