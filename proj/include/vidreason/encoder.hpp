#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vidreason/layers.hpp"

namespace vidreason {

/// T frames of H x W RGB intensities in [0, 1], stored (t, y, x, channel).
struct VideoClip {
  std::string id;
  double fps = 8.0;
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[((t * height + y) * width + x) * 3 + c];
  }
  double& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    return pixels[((t * height + y) * width + x) * 3 + c];
  }
  /// Throws ConfigError on empty clips, wrong buffer length or out-of-range intensities.
  void validate() const;
};

struct EncoderConfig {
  std::size_t patch = 4;
  std::size_t channels = 32;
  std::size_t scales = 3;

  bool operator==(const EncoderConfig&) const = default;
};

struct GridSize {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t cells() const { return rows * cols; }
  bool operator==(const GridSize&) const = default;
};

/// Per-frame pyramid: maps[t][level] is (grid[level].cells() x C); level 0 is the finest.
struct MultiScaleFeatures {
  std::size_t channels = 0;
  std::vector<GridSize> grids;
  std::vector<std::vector<Tensor>> maps;

  std::size_t frames() const { return maps.size(); }
  std::size_t levels() const { return grids.size(); }
  const Tensor& top(std::size_t t) const { return maps[t].back(); }
};

struct EncoderWeights {
  Linear patch_embed;       // 3p^2 -> C
  std::vector<Tensor> mix;  // one C x C map per coarser level

  static EncoderWeights init(const EncoderConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct EncoderCache {
  std::vector<Tensor> patches;             // per frame, N x 3p^2
  std::vector<std::vector<Tensor>> pooled;  // per frame, per coarser level, before the mix
};

/// Fixed 2D sinusoidal position codes for a grid: half the channels encode the
/// row index, the other half the column index.
Tensor position_codes_2d(const GridSize& grid, std::size_t channels);
/// 1D sinusoidal codes for sequence positions.
Tensor position_codes_1d(std::size_t length, std::size_t channels);

/// Level 1 is a linear patch embedding plus position codes; each further level
/// is 2x2 mean pooling of the previous one followed by a learned C x C mix.
MultiScaleFeatures encode_frames(const VideoClip& clip, const EncoderConfig& cfg, const EncoderWeights& w,
                                 EncoderCache* cache = nullptr);

/// Accumulates weight gradients given dL/dF for every frame and level.
void encode_frames_backward(const MultiScaleFeatures& dfeatures, const EncoderConfig& cfg,
                            const EncoderWeights& w, const EncoderCache& cache, EncoderWeights& grad);

/// Vision-to-language projection of the top-level features into width d.
Tensor project_visual(const Tensor& f_top, const Linear& proj);

/// Grid for each level, or ConfigError if the clip size is not divisible.
std::vector<GridSize> pyramid_grids(std::size_t height, std::size_t width, const EncoderConfig& cfg);

/// 2x2 mean pooling of a grid-major feature map and its adjoint.
Tensor mean_pool_2x2(const Tensor& map, const GridSize& grid);
Tensor mean_pool_2x2_backward(const Tensor& dpooled, const GridSize& fine_grid);

}  // namespace vidreason
