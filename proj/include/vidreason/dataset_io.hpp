#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vidreason/generator.hpp"

namespace vidreason {

inline constexpr int kDatasetVersion = 1;

/// Row-major run lengths, alternating background/foreground, background first.
std::vector<std::uint32_t> rle_encode(std::span<const std::uint8_t> mask);
/// Throws FormatError (mentioning `where`) when counts do not sum to `pixels`.
std::vector<std::uint8_t> rle_decode(std::span<const std::uint32_t> counts, std::size_t pixels,
                                     const std::string& where = "<memory>");

struct EpisodeFiles {
  std::string clip;
  std::string masks;
  std::string query;
  bool operator==(const EpisodeFiles&) const = default;
};

struct DatasetManifest {
  int version = kDatasetVersion;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::map<std::string, std::vector<std::string>> splits;  // train / val / test
  std::map<std::string, EpisodeFiles> episodes;

  const std::vector<std::string>& split(const std::string& name) const;
  bool operator==(const DatasetManifest&) const = default;
};

inline const std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

std::string manifest_json(const DatasetManifest& m);
/// FNV-1a of the key-sorted manifest text.
std::string manifest_digest(const DatasetManifest& m);

void write_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& path, const std::string& id);
void write_masks(const std::filesystem::path& path, const std::vector<MaskTracklet>& tracklets);
std::vector<MaskTracklet> read_masks(const std::filesystem::path& path);
void write_query(const std::filesystem::path& path, const QueryEpisode& ep);
/// Fills every field of `ep` except the clip and tracklets.
void read_query(const std::filesystem::path& path, QueryEpisode& ep);

/// Writes every episode and then manifest.json.
void write_dataset(const std::filesystem::path& dir, DatasetManifest manifest,
                   const std::vector<QueryEpisode>& episodes);
/// Reads manifest.json and checks the version and that every listed file exists.
DatasetManifest load_manifest(const std::filesystem::path& dir);
QueryEpisode load_episode(const std::filesystem::path& dir, const DatasetManifest& manifest, const std::string& id);

}  // namespace vidreason
