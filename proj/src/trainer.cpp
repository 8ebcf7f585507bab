#include "vidreason/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "vidreason/errors.hpp"

namespace vidreason {

using nlohmann::json;

std::string loss_csv_line(const LossRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.iter, r.total, r.parts.txt,
                r.parts.ce_f, r.parts.ce_v, r.parts.dice_f, r.parts.dice_v);
  return buf;
}

TrainState init_train_state(const RunConfig& cfg, const Vocabulary& vocab) {
  TrainState s;
  s.weights = ModelWeights::init(cfg.model, vocab, cfg.seed);
  return s;
}

namespace {

void add_scaled(LossComponents& acc, const LossComponents& c, double s) {
  acc.txt += s * c.txt;
  acc.ce_f += s * c.ce_f;
  acc.ce_v += s * c.ce_v;
  acc.dice_f += s * c.dice_f;
  acc.dice_v += s * c.dice_v;
}

std::string breakdown(const LossRow& r) {
  return "total=" + std::to_string(r.total) + " txt=" + std::to_string(r.parts.txt) +
         " ce_f=" + std::to_string(r.parts.ce_f) + " ce_v=" + std::to_string(r.parts.ce_v) +
         " dice_f=" + std::to_string(r.parts.dice_f) + " dice_v=" + std::to_string(r.parts.dice_v);
}

}  // namespace

TrainState train(const RunConfig& cfg, const std::vector<QueryEpisode>& episodes, const Vocabulary& vocab,
                 const IterationHook& hook) {
  cfg.validate();
  if (episodes.empty()) throw ConfigError("training split is empty");
  TrainState state = init_train_state(cfg, vocab);
  Rng rng(derive_seed(cfg.seed, 1000));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    ModelWeights grad = state.weights.zeros();
    LossRow row;
    row.iter = iter;
    const double inv = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order.resize(episodes.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      const LossReport lr = model_loss(episodes[order[cursor++]], state.weights, cfg.model, vocab, cfg.loss, &grad);
      row.total += lr.total * inv;
      add_scaled(row.parts, lr.parts, inv);
    }
    if (!std::isfinite(row.total)) {
      throw NumericalError("non-finite loss at iteration " + std::to_string(iter) + ": " + breakdown(row));
    }
    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    state.weights.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
    grad.visit([&](const std::string&, Tensor& t) {
      t *= inv;
      grads.push_back(&t);
    });
    adamw_step(params, grads, state.adam, cfg.optimizer, scheduled_lr(cfg.optimizer, iter, cfg.max_iters));
    state.iteration = iter;
    state.curve.push_back(row);
    if (hook) hook(state);
  }
  return state;
}

LossReport mean_loss(const std::vector<QueryEpisode>& episodes, const ModelWeights& w, const RunConfig& cfg,
                     const Vocabulary& vocab) {
  LossReport out;
  if (episodes.empty()) return out;
  const double inv = 1.0 / static_cast<double>(episodes.size());
  for (const auto& ep : episodes) {
    const LossReport r = model_loss(ep, w, cfg.model, vocab, cfg.loss);
    out.total += r.total * inv;
    add_scaled(out.parts, r.parts, inv);
  }
  return out;
}

std::size_t answer_multiple_choice(const MultipleChoice& mc, const VideoClip& clip,
                                   const std::vector<MaskTracklet>& predictions) {
  const MaskTracklet* best = nullptr;
  for (const auto& p : predictions) {
    if (p.area() == 0) continue;
    if (best == nullptr || p.confidence > best->confidence) best = &p;
  }
  if (best == nullptr) {
    auto it = std::find(mc.options.begin(), mc.options.end(), kNotSure);
    return it == mc.options.end() ? 0 : static_cast<std::size_t>(it - mc.options.begin());
  }
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::size_t count = 0;
  for (std::size_t t = 0; t < clip.frames; ++t)
    for (std::size_t y = 0; y < clip.height; ++y)
      for (std::size_t x = 0; x < clip.width; ++x) {
        if (best->at(t, y, x) == 0) continue;
        for (std::size_t c = 0; c < 3; ++c) mean[c] += clip.at(t, y, x, c);
        ++count;
      }
  for (auto& m : mean) m /= static_cast<double>(count);
  std::size_t chosen = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mc.options.size(); ++i) {
    if (mc.options[i] == kNotSure) continue;
    const auto& rgb = palette()[palette_index(mc.options[i])].rgb;
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += (rgb[c] - mean[c]) * (rgb[c] - mean[c]);
    if (d < best_dist) {
      best_dist = d;
      chosen = i;
    }
  }
  return chosen;
}

MaskTracklet union_of(const std::vector<MaskTracklet>& tracklets, const MaskTracklet& like) {
  MaskTracklet u = MaskTracklet::empty(like.frames, like.height, like.width);
  for (const auto& m : tracklets) {
    if (m.masks.size() != u.masks.size()) throw DimensionError("tracklet shapes differ within one clip");
    for (std::size_t i = 0; i < u.masks.size(); ++i) u.masks[i] |= m.masks[i];
  }
  return u;
}

EvalResult evaluate_predictions(const std::vector<QueryEpisode>& episodes,
                                const std::vector<std::vector<MaskTracklet>>& predictions) {
  if (episodes.size() != predictions.size()) throw DimensionError("one prediction list per episode is required");
  std::vector<EpisodeScore> scores;
  std::vector<DetectionSet> sets;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const QueryEpisode& ep = episodes[e];
    DetectionSet set;
    for (const auto& p : predictions[e])
      if (p.area() > 0) set.preds.push_back(p);
    set.gts = ep.tracklets;
    const MaskTracklet gt = union_of(ep.tracklets, ep.tracklets.front());
    const MaskTracklet pred = union_of(set.preds, ep.tracklets.front());
    EpisodeScore s;
    s.id = ep.id;
    s.j = region_similarity_J(pred, gt);
    s.f = contour_accuracy_F(pred, gt);
    s.mc_chosen = answer_multiple_choice(ep.mc, ep.clip, set.preds);
    s.mc_key = ep.mc.key;
    scores.push_back(std::move(s));
    sets.push_back(std::move(set));
  }
  return summarize(std::move(scores), sets);
}

EvalResult evaluate_model(const std::vector<QueryEpisode>& episodes, const ModelWeights& w, const ModelConfig& cfg,
                          const Vocabulary& vocab) {
  std::vector<std::vector<MaskTracklet>> preds;
  for (const auto& ep : episodes) preds.push_back(predict(ep.clip, ep.query, w, cfg, vocab).tracklets);
  return evaluate_predictions(episodes, preds);
}

std::string eval_report_json(const EvalResult& r, const RunConfig& cfg) {
  json eps = json::array();
  for (const auto& e : r.episodes) {
    eps.push_back({{"id", e.id}, {"J", e.j}, {"F", e.f}, {"mc_chosen", e.mc_chosen}, {"mc_key", e.mc_key}});
  }
  json j = {{"J", r.j},
            {"F", r.f},
            {"JF_mean", r.jf_mean},
            {"AP", r.ap},
            {"AR", r.ar},
            {"AP50", r.ap50},
            {"mc_accuracy", r.mc_accuracy},
            {"mc_rule", kMcRule},
            {"learning_rate", cfg.optimizer.lr},
            {"config_digest", config_digest(cfg)},
            {"episodes", eps}};
  return j.dump(2) + "\n";
}

std::vector<QueryEpisode> load_split(const std::filesystem::path& dir, const std::string& split) {
  const DatasetManifest m = load_manifest(dir);
  std::vector<QueryEpisode> out;
  for (const auto& id : m.split(split)) out.push_back(load_episode(dir, m, id));
  return out;
}

std::pair<DatasetManifest, std::vector<QueryEpisode>> generate_dataset(const RunConfig& cfg) {
  cfg.generator.validate();
  std::vector<QueryEpisode> episodes;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < cfg.generator.episodes; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "ep%05zu", i);
    episodes.push_back(generate_episode(derive_seed(cfg.seed, i), cfg.generator, id));
    ids.emplace_back(id);
  }
  DatasetManifest m;
  m.seed = cfg.seed;
  m.config_digest = config_digest(cfg);
  const auto parts = split_ids(ids, cfg.generator.ratios, derive_seed(cfg.seed, 0xffffffffULL));
  for (std::size_t s = 0; s < parts.size(); ++s) m.splits[kSplitNames[s]] = parts[s];
  for (const auto& ep : episodes) {
    const std::string rel = "episodes/" + ep.id + "/";
    m.episodes[ep.id] = EpisodeFiles{rel + "clip.bin", rel + "masks.rle", rel + "query.json"};
  }
  return {std::move(m), std::move(episodes)};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationArm> run_ablation(const RunConfig& base, const std::vector<QueryEpisode>& train_set,
                                      const std::vector<QueryEpisode>& eval_set, std::vector<AblationArm> arms,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  const Vocabulary vocab = Vocabulary::standard(base.model.seg_tokens);
  for (auto& arm : arms) {
    RunConfig cfg = base;
    for (const auto& o : arm.overrides) cfg = apply_override(cfg, o);
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      const TrainState s = train(cfg, train_set, vocab);
      const EvalResult r = evaluate_model(eval_set, s.weights, cfg.model, vocab);
      arm.ap.push_back(r.ap);
      arm.mc.push_back(r.mc_accuracy);
      if (log != nullptr) {
        *log << arm.name << " seed " << seed << ": AP " << r.ap << " MC " << r.mc_accuracy << "\n";
      }
    }
    arm.median_ap = median(arm.ap);
    arm.median_mc = median(arm.mc);
  }
  return arms;
}

std::string ablation_report_json(const std::vector<AblationArm>& arms, const RunConfig& base) {
  json j = json::object();
  json list = json::array();
  for (const auto& a : arms) {
    list.push_back({{"name", a.name},
                    {"overrides", a.overrides},
                    {"AP", a.ap},
                    {"mc_accuracy", a.mc},
                    {"median_AP", a.median_ap},
                    {"median_mc_accuracy", a.median_mc}});
  }
  j["arms"] = list;
  j["config_digest"] = config_digest(base);
  if (!arms.empty()) {
    json dir = json::object();
    for (std::size_t i = 1; i < arms.size(); ++i) {
      dir[arms[i].name] = {{"baseline_AP_minus_arm", arms[0].median_ap - arms[i].median_ap},
                           {"baseline_mc_minus_arm", arms[0].median_mc - arms[i].median_mc},
                           {"component_helps", arms[0].median_ap >= arms[i].median_ap}};
    }
    j["direction"] = dir;
  }
  return j.dump(2) + "\n";
}

}  // namespace vidreason
