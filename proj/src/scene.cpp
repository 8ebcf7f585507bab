#include "vidreason/scene.hpp"

#include <cmath>
#include <numbers>

#include "vidreason/errors.hpp"

namespace vidreason {

std::string shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::kCircle:
      return "circle";
    case ShapeKind::kSquare:
      return "square";
    case ShapeKind::kTriangle:
      return "triangle";
  }
  return "circle";
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> colors = {
      {"red", {1.0, 0.0, 0.0}},    {"green", {0.0, 1.0, 0.0}},  {"blue", {0.0, 0.0, 1.0}},
      {"yellow", {1.0, 1.0, 0.0}}, {"purple", {0.5, 0.0, 0.5}}, {"white", {1.0, 1.0, 1.0}},
  };
  return colors;
}

std::size_t palette_index(const std::string& name) {
  const auto& p = palette();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].name == name) return i;
  }
  throw EncodingError("unknown palette color '" + name + "'");
}

std::array<double, 2> InstanceSpec::position(std::size_t t) const {
  const double ft = static_cast<double>(t);
  if (trajectory == TrajectoryKind::kLinear) return {x0 + ft * vx, y0 + ft * vy};
  const double a = phase + ft * omega;
  return {cx + orbit * std::cos(a), cy + orbit * std::sin(a)};
}

bool InstanceSpec::covers(std::size_t t, double px, double py) const {
  const auto [x, y] = position(t);
  const double dx = px - x, dy = py - y;
  switch (shape) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= size * size;
    case ShapeKind::kSquare:
      return std::abs(dx) <= size && std::abs(dy) <= size;
    case ShapeKind::kTriangle:
      // apex up at (0, -size), base along dy = +size
      return dy >= -size && dy <= size && std::abs(dx) <= 0.5 * (dy + size);
  }
  return false;
}

double InstanceSpec::area() const {
  switch (shape) {
    case ShapeKind::kCircle:
      return std::numbers::pi * size * size;
    case ShapeKind::kSquare:
      return 4.0 * size * size;
    case ShapeKind::kTriangle:
      return 2.0 * size * size;
  }
  return 0.0;
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0 || frames == 0) throw ConfigError("scene canvas and frame count must be positive");
  for (const auto& inst : instances) {
    if (!(inst.size > 0.0)) throw ConfigError("instance " + std::to_string(inst.id) + " has non-positive size");
    if (inst.color >= palette().size()) throw ConfigError("instance color index out of range");
  }
}

const InstanceSpec& SceneSpec::instance(std::uint32_t id) const {
  for (const auto& inst : instances) {
    if (inst.id == id) return inst;
  }
  throw ConfigError("scene has no instance " + std::to_string(id));
}

RenderedScene render_scene(const SceneSpec& scene, const std::string& clip_id) {
  scene.validate();
  RenderedScene out;
  VideoClip& clip = out.clip;
  clip.id = clip_id;
  clip.frames = scene.frames;
  clip.height = scene.height;
  clip.width = scene.width;
  clip.pixels.assign(scene.frames * scene.height * scene.width * 3, 0.0);
  for (const auto& inst : scene.instances) {
    MaskTracklet m = MaskTracklet::empty(scene.frames, scene.height, scene.width);
    m.instance_id = inst.id;
    out.tracklets.push_back(std::move(m));
  }
  for (std::size_t t = 0; t < scene.frames; ++t) {
    for (std::size_t y = 0; y < scene.height; ++y) {
      for (std::size_t x = 0; x < scene.width; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        std::size_t owner = scene.instances.size();
        for (std::size_t i = 0; i < scene.instances.size(); ++i) {
          const auto& inst = scene.instances[i];
          if (inst.covers(t, px, py) && (owner == scene.instances.size() || inst.depth > scene.instances[owner].depth)) {
            owner = i;
          }
        }
        if (owner == scene.instances.size()) continue;
        out.tracklets[owner].at(t, y, x) = 1;
        const auto& rgb = palette()[scene.instances[owner].color].rgb;
        for (std::size_t c = 0; c < 3; ++c) clip.at(t, y, x, c) = static_cast<double>(static_cast<float>(rgb[c]));
      }
    }
  }
  return out;
}

MaskTracklet coverage(const SceneSpec& scene, const InstanceSpec& inst) {
  MaskTracklet m = MaskTracklet::empty(scene.frames, scene.height, scene.width);
  m.instance_id = inst.id;
  for (std::size_t t = 0; t < scene.frames; ++t)
    for (std::size_t y = 0; y < scene.height; ++y)
      for (std::size_t x = 0; x < scene.width; ++x)
        m.at(t, y, x) = inst.covers(t, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5) ? 1 : 0;
  return m;
}

}  // namespace vidreason
