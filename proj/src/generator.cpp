#include "vidreason/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vidreason/errors.hpp"

namespace vidreason {

namespace {

constexpr double kMinDrift = 8.0;      // pixels of net travel to count as drifting
constexpr double kUniqueMargin = 1.25;  // ratio separating an extreme from the runner-up

using Ids = std::vector<std::uint32_t>;
using Pred = std::function<std::optional<Ids>(const SceneSpec&)>;

std::optional<Ids> nonempty(Ids ids) {
  if (ids.empty()) return std::nullopt;
  std::sort(ids.begin(), ids.end());
  return ids;
}

Pred color_is(std::size_t color) {
  return [color](const SceneSpec& s) {
    Ids ids;
    for (const auto& i : s.instances)
      if (i.color == color) ids.push_back(i.id);
    return nonempty(ids);
  };
}

Pred shape_is(ShapeKind kind) {
  return [kind](const SceneSpec& s) {
    Ids ids;
    for (const auto& i : s.instances)
      if (i.shape == kind) ids.push_back(i.id);
    return nonempty(ids);
  };
}

Pred drifts(int axis, int sign) {
  return [axis, sign](const SceneSpec& s) {
    Ids ids;
    for (const auto& i : s.instances) {
      const auto d = net_displacement(i, s.frames);
      const double along = sign * d[axis], across = std::abs(d[1 - axis]);
      if (along >= kMinDrift && along > 2.0 * across) ids.push_back(i.id);
    }
    return nonempty(ids);
  };
}

// The unique instance maximizing `score` among those passing `keep`, separated by kUniqueMargin.
Pred extreme(std::function<double(const SceneSpec&, const InstanceSpec&)> score,
             std::function<bool(const SceneSpec&, const InstanceSpec&)> keep = nullptr) {
  return [score, keep](const SceneSpec& s) -> std::optional<Ids> {
    std::vector<std::pair<double, std::uint32_t>> v;
    for (const auto& i : s.instances) {
      if (keep && !keep(s, i)) continue;
      v.emplace_back(score(s, i), i.id);
    }
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (v.size() > 1 && !(v[0].first > 0.0 && v[0].first >= kUniqueMargin * v[1].first)) return std::nullopt;
    return Ids{v[0].second};
  };
}

double inverse(double x) { return x > 0.0 ? 1.0 / x : 1e300; }

std::vector<QueryTemplate> build_templates() {
  std::vector<QueryTemplate> t;
  const std::pair<const char*, const char*> cues[] = {
      {"red", "ripe tomato"}, {"green", "fresh grass"}, {"blue", "clear sky"},
      {"yellow", "ripe banana"}, {"purple", "grape"}, {"white", "fresh snow"}};
  for (const auto& [color, cue] : cues) {
    t.push_back({"color", std::string("the shape colored like a ") + cue, color_is(palette_index(color))});
  }
  t.push_back({"shape", "the shape with three corners", shape_is(ShapeKind::kTriangle)});
  t.push_back({"shape", "the shape with four corners", shape_is(ShapeKind::kSquare)});
  t.push_back({"shape", "the shape with no corners", shape_is(ShapeKind::kCircle)});
  t.push_back({"motion", "the shape drifting toward the left edge", drifts(0, -1)});
  t.push_back({"motion", "the shape drifting toward the right edge", drifts(0, 1)});
  t.push_back({"motion", "the shape drifting toward the top edge", drifts(1, -1)});
  t.push_back({"motion", "the shape drifting toward the bottom edge", drifts(1, 1)});
  t.push_back({"motion", "the shape that moves fastest",
               extreme([](const SceneSpec& s, const InstanceSpec& i) { return mean_speed(i, s.frames); })});
  t.push_back({"motion", "the shape that moves slowest",
               extreme([](const SceneSpec& s, const InstanceSpec& i) { return inverse(mean_speed(i, s.frames)); })});
  t.push_back({"relational", "the largest shape",
               extreme([](const SceneSpec&, const InstanceSpec& i) { return i.area(); })});
  t.push_back({"relational", "the smallest shape",
               extreme([](const SceneSpec&, const InstanceSpec& i) { return inverse(i.area()); })});
  t.push_back({"relational", "the largest shape that never overlaps another",
               extreme([](const SceneSpec&, const InstanceSpec& i) { return i.area(); },
                       [](const SceneSpec& s, const InstanceSpec& i) { return never_overlaps(s, i); })});
  return t;
}

std::string pick_family(Rng& rng, const GeneratorConfig& cfg) {
  double total = 0.0;
  for (const auto& [name, w] : cfg.template_weights) total += w;
  double r = rng.uniform() * total;
  for (const auto& [name, w] : cfg.template_weights) {
    if (w <= 0.0) continue;
    if (r < w) return name;
    r -= w;
  }
  for (auto it = cfg.template_weights.rbegin(); it != cfg.template_weights.rend(); ++it)
    if (it->second > 0.0) return it->first;
  throw ConfigError("no query family has positive weight");
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

MultipleChoice build_mc(const SceneSpec& scene, const std::string& query, const Ids& targets, Rng& rng) {
  MultipleChoice mc;
  mc.question = (targets.size() == 1 ? "What color is " : "Which color belongs to ") + query + "?";
  const std::string key = palette()[scene.instance(targets.front()).color].name;
  std::vector<std::string> scene_colors, other_colors;
  for (const auto& i : scene.instances) {
    if (std::find(targets.begin(), targets.end(), i.id) == targets.end()) scene_colors.push_back(palette()[i.color].name);
  }
  for (const auto& c : palette()) {
    bool used = false;
    for (const auto& i : scene.instances) used = used || palette()[i.color].name == c.name;
    if (!used) other_colors.push_back(c.name);
  }
  shuffle(scene_colors, rng);
  shuffle(other_colors, rng);
  std::vector<std::string> pool = scene_colors;  // true-but-wrong attributes first
  pool.insert(pool.end(), other_colors.begin(), other_colors.end());
  pool.push_back(kNotSure);
  const std::size_t count = 3 + rng.below(3);
  mc.options.push_back(key);
  for (std::size_t i = 0; mc.options.size() < count && i < pool.size(); ++i) mc.options.push_back(pool[i]);
  shuffle(mc.options, rng);
  mc.key = static_cast<std::size_t>(std::find(mc.options.begin(), mc.options.end(), key) - mc.options.begin());
  return mc;
}

std::vector<std::string> answer_words(const SceneSpec& scene, const Ids& targets) {
  if (targets.size() > 1) return {"the", "objects", "are"};
  const auto& inst = scene.instance(targets.front());
  return {"the", palette()[inst.color].name, shape_name(inst.shape), "is"};
}

}  // namespace

void GeneratorConfig::validate() const {
  if (min_instances < 2 || max_instances > 5 || min_instances > max_instances) {
    throw ConfigError("instance count range must lie within 2..5");
  }
  if (frames < 4) throw ConfigError("clips need at least 4 frames");
  if (height == 0 || width == 0) throw ConfigError("canvas must be non-empty");
  if (!(min_size > 0.0) || max_size < min_size) throw ConfigError("invalid instance size range");
  if (2.0 * max_size + 2.0 >= static_cast<double>(std::min(height, width))) {
    throw ConfigError("instances do not fit the canvas");
  }
  if (!(circular_fraction >= 0.0 && circular_fraction <= 1.0)) throw ConfigError("circular_fraction must be in [0, 1]");
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  double wsum = 0.0;
  for (const auto& [name, w] : template_weights) {
    if (name != "color" && name != "shape" && name != "motion" && name != "relational") {
      throw ConfigError("unknown query family '" + name + "'");
    }
    if (!(w >= 0.0)) throw ConfigError("template weights must be non-negative");
    wsum += w;
  }
  if (!(wsum > 0.0)) throw ConfigError("at least one query family needs positive weight");
  if (max_retries == 0) throw ConfigError("max_retries must be positive");
}

const std::vector<QueryTemplate>& query_templates() {
  static const std::vector<QueryTemplate> templates = build_templates();
  return templates;
}

const QueryTemplate& find_template(const std::string& text) {
  for (const auto& t : query_templates()) {
    if (t.text == text) return t;
  }
  throw EncodingError("unknown query template '" + text + "'");
}

std::array<double, 2> net_displacement(const InstanceSpec& inst, std::size_t frames) {
  const auto a = inst.position(0), b = inst.position(frames - 1);
  return {b[0] - a[0], b[1] - a[1]};
}

double mean_speed(const InstanceSpec& inst, std::size_t frames) {
  if (frames < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 1; t < frames; ++t) {
    const auto a = inst.position(t - 1), b = inst.position(t);
    sum += std::hypot(b[0] - a[0], b[1] - a[1]);
  }
  return sum / static_cast<double>(frames - 1);
}

bool never_overlaps(const SceneSpec& scene, const InstanceSpec& inst) {
  const MaskTracklet mine = coverage(scene, inst);
  for (const auto& other : scene.instances) {
    if (other.id == inst.id) continue;
    const MaskTracklet theirs = coverage(scene, other);
    for (std::size_t i = 0; i < mine.masks.size(); ++i) {
      if (mine.masks[i] != 0 && theirs.masks[i] != 0) return false;
    }
  }
  return true;
}

SceneSpec sample_scene(Rng& rng, const GeneratorConfig& cfg) {
  SceneSpec s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.frames = cfg.frames;
  const std::size_t n = cfg.min_instances + rng.below(cfg.max_instances - cfg.min_instances + 1);
  std::vector<std::size_t> colors(palette().size());
  for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = i;
  shuffle(colors, rng);
  std::vector<int> depths(n);
  for (std::size_t i = 0; i < n; ++i) depths[i] = static_cast<int>(i);
  shuffle(depths, rng);
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
  const double last = static_cast<double>(cfg.frames - 1);
  for (std::size_t k = 0; k < n; ++k) {
    InstanceSpec inst;
    inst.id = static_cast<std::uint32_t>(k + 1);
    inst.shape = static_cast<ShapeKind>(rng.below(3));
    inst.size = rng.uniform(cfg.min_size, cfg.max_size);
    inst.color = colors[k];
    inst.depth = depths[k];
    const double m = inst.size + 1.0;
    if (rng.uniform() < cfg.circular_fraction) {
      inst.trajectory = TrajectoryKind::kCircular;
      const double max_orbit = std::max(2.0, std::min(12.0, 0.5 * std::min(w, h) - m - 1.0));
      inst.orbit = rng.uniform(2.0, max_orbit);
      inst.cx = rng.uniform(m + inst.orbit, w - m - inst.orbit);
      inst.cy = rng.uniform(m + inst.orbit, h - m - inst.orbit);
      inst.omega = rng.uniform(0.2, 0.7) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      inst.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    } else {
      inst.x0 = rng.uniform(m, w - m);
      inst.y0 = rng.uniform(m, h - m);
      const double x1 = rng.uniform(m, w - m), y1 = rng.uniform(m, h - m);
      inst.vx = (x1 - inst.x0) / last;
      inst.vy = (y1 - inst.y0) / last;
    }
    s.instances.push_back(inst);
  }
  return s;
}

QueryEpisode generate_episode(std::uint64_t seed, const GeneratorConfig& cfg, const std::string& id) {
  cfg.validate();
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
    SceneSpec scene = sample_scene(rng, cfg);
    const std::string family = pick_family(rng, cfg);
    std::vector<const QueryTemplate*> candidates;
    for (const auto& t : query_templates())
      if (t.family == family) candidates.push_back(&t);
    const QueryTemplate& tpl = *candidates[rng.below(candidates.size())];
    const auto targets = tpl.predicate(scene);
    if (!targets) continue;
    RenderedScene rendered = render_scene(scene, id);
    QueryEpisode ep;
    bool visible = true;
    for (std::uint32_t tid : *targets) {
      for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        if (scene.instances[i].id != tid) continue;
        visible = visible && rendered.tracklets[i].area() > 0;
        ep.tracklets.push_back(rendered.tracklets[i]);
      }
    }
    if (!visible) continue;
    ep.id = id;
    ep.clip = std::move(rendered.clip);
    ep.family = family;
    ep.query = tpl.text;
    ep.target_ids = *targets;
    ep.mc = build_mc(scene, tpl.text, *targets, rng);
    ep.answer = answer_words(scene, *targets);
    ep.scene = std::move(scene);
    return ep;
  }
  throw GenerationError("episode " + id + ": no satisfiable query after " + std::to_string(cfg.max_retries) +
                        " attempts");
}

std::vector<std::vector<std::string>> split_ids(std::vector<std::string> ids, const std::array<double, 3>& ratios,
                                                std::uint64_t seed) {
  if (ids.size() < ratios.size()) {
    throw ConfigError(std::to_string(ids.size()) + " episodes cannot fill " + std::to_string(ratios.size()) +
                      " splits");
  }
  double sum = 0.0;
  for (double r : ratios) sum += r;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  shuffle(ids, rng);
  std::vector<std::vector<std::string>> out(ratios.size());
  std::size_t begin = 0;
  for (std::size_t s = 0; s < ratios.size(); ++s) {
    std::size_t take = ids.size() - begin;
    if (s + 1 < ratios.size()) {
      take = std::min(take, static_cast<std::size_t>(std::floor(static_cast<double>(ids.size()) * ratios[s] + 1e-9)));
    }
    out[s].assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(begin + take));
    std::sort(out[s].begin(), out[s].end());
    begin += take;
  }
  return out;
}

}  // namespace vidreason
