#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vidreason/decoder.hpp"
#include "vidreason/encoder.hpp"

namespace vidreason {

enum class ShapeKind { kCircle, kSquare, kTriangle };
enum class TrajectoryKind { kLinear, kCircular };

std::string shape_name(ShapeKind s);

struct PaletteColor {
  std::string name;
  std::array<double, 3> rgb;
};

/// Six colors, each exactly representable in f32.
const std::vector<PaletteColor>& palette();
std::size_t palette_index(const std::string& name);

struct InstanceSpec {
  std::uint32_t id = 0;
  ShapeKind shape = ShapeKind::kCircle;
  double size = 5.0;  // radius, or half the side / height
  std::size_t color = 0;
  int depth = 0;  // larger is in front
  TrajectoryKind trajectory = TrajectoryKind::kLinear;
  // linear: start + t * velocity
  double x0 = 0.0, y0 = 0.0, vx = 0.0, vy = 0.0;
  // circular: centre + radius * (cos, sin)(phase + t * omega)
  double cx = 0.0, cy = 0.0, orbit = 0.0, omega = 0.0, phase = 0.0;

  std::array<double, 2> position(std::size_t t) const;
  /// Does the shape cover the point (px, py) at frame t?
  bool covers(std::size_t t, double px, double py) const;
  double area() const;
};

struct SceneSpec {
  std::size_t height = 64, width = 64, frames = 8;
  std::vector<InstanceSpec> instances;

  void validate() const;
  const InstanceSpec& instance(std::uint32_t id) const;
};

struct RenderedScene {
  VideoClip clip;
  std::vector<MaskTracklet> tracklets;  // aligned with scene.instances, visible pixels only
};

/// Rasterizes pixel centres; each pixel belongs to the front-most covering instance.
RenderedScene render_scene(const SceneSpec& scene, const std::string& clip_id);

/// Coverage of an instance ignoring occlusion.
MaskTracklet coverage(const SceneSpec& scene, const InstanceSpec& inst);

}  // namespace vidreason
