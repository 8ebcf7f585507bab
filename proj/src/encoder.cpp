#include "vidreason/encoder.hpp"

#include <cmath>

#include "vidreason/errors.hpp"

namespace vidreason {

void VideoClip::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw ConfigError("video clip '" + id + "' is empty");
  if (pixels.size() != frames * height * width * 3) {
    throw ConfigError("video clip '" + id + "' pixel buffer has wrong length");
  }
  for (double v : pixels) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("video clip '" + id + "' has intensity outside [0,1]");
  }
}

std::vector<GridSize> pyramid_grids(std::size_t height, std::size_t width, const EncoderConfig& cfg) {
  if (cfg.patch == 0 || cfg.scales == 0 || cfg.channels == 0) {
    throw ConfigError("encoder patch, scales and channels must be positive");
  }
  const std::size_t unit = cfg.patch << (cfg.scales - 1);
  if (height % unit != 0 || width % unit != 0) {
    throw ConfigError("frame size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch " + std::to_string(cfg.patch) + " over " +
                      std::to_string(cfg.scales) + " scales");
  }
  std::vector<GridSize> grids;
  GridSize g{height / cfg.patch, width / cfg.patch};
  for (std::size_t l = 0; l < cfg.scales; ++l) {
    grids.push_back(g);
    g = GridSize{g.rows / 2, g.cols / 2};
  }
  return grids;
}

namespace {

void sinusoid(double pos, std::size_t channels, double* out) {
  for (std::size_t c = 0; c < channels; ++c) {
    const double k = static_cast<double>(c / 2);
    const double freq = std::pow(10000.0, -2.0 * k / static_cast<double>(channels));
    out[c] = (c % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
  }
}

}  // namespace

Tensor position_codes_2d(const GridSize& grid, std::size_t channels) {
  const std::size_t half = channels / 2;
  Tensor codes = Tensor::matrix(grid.cells(), channels);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      double* row = codes.row(r * grid.cols + c).data();
      sinusoid(static_cast<double>(r), half, row);
      sinusoid(static_cast<double>(c), channels - half, row + half);
    }
  }
  return codes;
}

Tensor position_codes_1d(std::size_t length, std::size_t channels) {
  Tensor codes = Tensor::matrix(length, channels);
  for (std::size_t i = 0; i < length; ++i) sinusoid(static_cast<double>(i), channels, codes.row(i).data());
  return codes;
}

EncoderWeights EncoderWeights::init(const EncoderConfig& cfg, Rng& rng) {
  EncoderWeights w;
  w.patch_embed = Linear::init(3 * cfg.patch * cfg.patch, cfg.channels, rng);
  for (std::size_t l = 1; l < cfg.scales; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
    w.mix.push_back(random_uniform({cfg.channels, cfg.channels}, rng, -bound, bound));
  }
  return w;
}

void EncoderWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  patch_embed.visit(prefix + ".patch_embed", f);
  for (std::size_t l = 0; l < mix.size(); ++l) f(prefix + ".mix" + std::to_string(l + 1), mix[l]);
}

Tensor mean_pool_2x2(const Tensor& map, const GridSize& grid) {
  const GridSize out{grid.rows / 2, grid.cols / 2};
  const std::size_t c = map.cols();
  Tensor pooled = Tensor::matrix(out.cells(), c);
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t q = 0; q < out.cols; ++q) {
      auto dst = pooled.row(r * out.cols + q);
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
          auto src = map.row((2 * r + dy) * grid.cols + 2 * q + dx);
          for (std::size_t j = 0; j < c; ++j) dst[j] += 0.25 * src[j];
        }
      }
    }
  }
  return pooled;
}

Tensor mean_pool_2x2_backward(const Tensor& dpooled, const GridSize& fine_grid) {
  const GridSize out{fine_grid.rows / 2, fine_grid.cols / 2};
  const std::size_t c = dpooled.cols();
  Tensor dmap = Tensor::matrix(fine_grid.cells(), c);
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t q = 0; q < out.cols; ++q) {
      auto src = dpooled.row(r * out.cols + q);
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
          auto dst = dmap.row((2 * r + dy) * fine_grid.cols + 2 * q + dx);
          for (std::size_t j = 0; j < c; ++j) dst[j] += 0.25 * src[j];
        }
      }
    }
  }
  return dmap;
}

MultiScaleFeatures encode_frames(const VideoClip& clip, const EncoderConfig& cfg, const EncoderWeights& w,
                                 EncoderCache* cache) {
  MultiScaleFeatures out;
  out.channels = cfg.channels;
  out.grids = pyramid_grids(clip.height, clip.width, cfg);
  const GridSize& g0 = out.grids.front();
  const std::size_t p = cfg.patch;
  const Tensor pos = position_codes_2d(g0, cfg.channels);
  if (cache != nullptr) {
    cache->patches.clear();
    cache->pooled.clear();
  }
  for (std::size_t t = 0; t < clip.frames; ++t) {
    Tensor patches = Tensor::matrix(g0.cells(), 3 * p * p);
    for (std::size_t gy = 0; gy < g0.rows; ++gy) {
      for (std::size_t gx = 0; gx < g0.cols; ++gx) {
        auto row = patches.row(gy * g0.cols + gx);
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t ch = 0; ch < 3; ++ch)
              row[(dy * p + dx) * 3 + ch] = clip.at(t, gy * p + dy, gx * p + dx, ch);
      }
    }
    std::vector<Tensor> levels;
    levels.push_back(w.patch_embed.forward(patches) + pos);
    std::vector<Tensor> pooled_levels;
    for (std::size_t l = 1; l < cfg.scales; ++l) {
      Tensor pooled = mean_pool_2x2(levels.back(), out.grids[l - 1]);
      levels.push_back(matmul(pooled, w.mix[l - 1]));
      pooled_levels.push_back(std::move(pooled));
    }
    out.maps.push_back(std::move(levels));
    if (cache != nullptr) {
      cache->patches.push_back(std::move(patches));
      cache->pooled.push_back(std::move(pooled_levels));
    }
  }
  return out;
}

void encode_frames_backward(const MultiScaleFeatures& dfeatures, const EncoderConfig& cfg,
                            const EncoderWeights& w, const EncoderCache& cache, EncoderWeights& grad) {
  for (std::size_t t = 0; t < dfeatures.frames(); ++t) {
    Tensor carry;  // gradient flowing into the level below from the level above
    for (std::size_t l = cfg.scales; l-- > 1;) {
      Tensor d = dfeatures.maps[t][l];
      if (!carry.empty()) d += carry;
      grad.mix[l - 1] += matmul_tn(cache.pooled[t][l - 1], d);
      Tensor dpooled = matmul_nt(d, w.mix[l - 1]);
      carry = mean_pool_2x2_backward(dpooled, dfeatures.grids[l - 1]);
    }
    Tensor d0 = dfeatures.maps[t][0];
    if (!carry.empty()) d0 += carry;
    w.patch_embed.backward(cache.patches[t], d0, grad.patch_embed);
  }
}

Tensor project_visual(const Tensor& f_top, const Linear& proj) {
  if (f_top.cols() != proj.weight.rows()) {
    throw DimensionError("visual projection expects width " + std::to_string(proj.weight.rows()) + ", got " +
                         shape_string(f_top.shape()));
  }
  return proj.forward(f_top);
}

}  // namespace vidreason
