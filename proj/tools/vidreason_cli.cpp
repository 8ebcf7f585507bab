#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vidreason/checkpoint.hpp"
#include "vidreason/dataset_io.hpp"
#include "vidreason/errors.hpp"
#include "vidreason/run_config.hpp"
#include "vidreason/trainer.hpp"

namespace fs = std::filesystem;
using namespace vidreason;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split = "val";
  std::string episode;
  std::vector<std::string> ablate;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t seeds = 5;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed_given) cfg.seed = o.seed;
  for (const auto& a : o.ablate) cfg = apply_override(cfg, a);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
}

int cmd_generate(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  auto [manifest, episodes] = generate_dataset(cfg);
  make_dir(o.out);
  write_dataset(o.out, manifest, episodes);
  for (const char* name : kSplitNames) std::cout << name << ": " << manifest.split(name).size() << "\n";
  std::cout << "manifest digest " << manifest_digest(manifest) << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const std::vector<QueryEpisode> episodes = load_split(o.data, "train");
  const Vocabulary vocab = Vocabulary::standard(cfg.model.seg_tokens);
  make_dir(o.out);
  const fs::path out(o.out);
  const std::string cfg_text = to_json_text(cfg);
  write_text(out / "config.json", cfg_text);
  std::ofstream csv(out / "loss.csv", std::ios::trunc);
  if (!csv) throw FormatError("cannot write " + (out / "loss.csv").string());
  csv << kLossCsvHeader << "\n";
  auto save = [&](const TrainState& s, const fs::path& path) {
    ModelWeights w = s.weights;
    save_checkpoint(path, make_checkpoint(w, s.adam, s.iteration, cfg_text, config_digest(cfg), vocab));
  };
  const TrainState state = train(cfg, episodes, vocab, [&](const TrainState& s) {
    csv << loss_csv_line(s.curve.back()) << "\n";
    csv.flush();
    if (cfg.save_every > 0 && s.iteration % cfg.save_every == 0 && s.iteration < cfg.max_iters) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06zu.bin", s.iteration);
      save(s, out / name);
    }
  });
  save(state, out / "checkpoint.bin");
  if (!state.curve.empty()) {
    std::cout << "iterations " << state.iteration << ", loss " << state.curve.front().total << " -> "
              << state.curve.back().total << "\n";
  } else {
    std::cout << "iterations 0, checkpoint holds the initialization\n";
  }
  return kOk;
}

struct Loaded {
  RunConfig cfg;
  Vocabulary vocab;
  ModelWeights weights;
};

Loaded load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  RunConfig cfg = run_config_from_json_text(ck.config_json);
  if (config_digest(cfg) != ck.config_digest) throw FormatError(path + ": config digest does not match its config");
  Vocabulary vocab(ck.vocabulary, cfg.model.seg_tokens);
  ModelWeights w = ModelWeights::init(cfg.model, vocab, cfg.seed);
  restore_weights(ck, w);
  return Loaded{std::move(cfg), std::move(vocab), std::move(w)};
}

int cmd_eval(const Options& o) {
  const Loaded m = load_model(o.checkpoint);
  const std::vector<QueryEpisode> episodes = load_split(o.data, o.split);
  const EvalResult r = evaluate_model(episodes, m.weights, m.cfg.model, m.vocab);
  std::printf("%-10s %8s %8s\n", "episode", "J", "F");
  for (const auto& e : r.episodes) std::printf("%-10s %8.4f %8.4f\n", e.id.c_str(), e.j, e.f);
  std::printf("J %.4f  F %.4f  J&F %.4f  AP %.4f  AP50 %.4f  AR %.4f  MC %.4f\n", r.j, r.f, r.jf_mean, r.ap, r.ap50,
              r.ar, r.mc_accuracy);
  const std::string report = eval_report_json(r, m.cfg);
  if (!o.out.empty()) {
    make_dir(o.out);
    write_text(fs::path(o.out) / ("report_" + o.split + ".json"), report);
  }
  return kOk;
}

int cmd_infer(const Options& o) {
  const Loaded m = load_model(o.checkpoint);
  const DatasetManifest manifest = load_manifest(o.data);
  std::vector<std::string> ids = o.episode.empty() ? manifest.split(o.split) : std::vector<std::string>{o.episode};
  if (!o.out.empty()) make_dir(o.out);
  for (const auto& id : ids) {
    const QueryEpisode ep = load_episode(o.data, manifest, id);
    const Prediction p = predict(ep.clip, ep.query, m.weights, m.cfg.model, m.vocab);
    std::vector<MaskTracklet> kept;
    for (const auto& t : p.tracklets)
      if (t.area() > 0) kept.push_back(t);
    const std::size_t choice = answer_multiple_choice(ep.mc, ep.clip, kept);
    std::cout << id << ": \"" << ep.query << "\" -> \"" << p.text << "\", " << kept.size() << " tracklet(s), MC "
              << ep.mc.options[choice] << "\n";
    if (!o.out.empty()) {
      for (std::size_t i = 0; i < kept.size(); ++i) kept[i].instance_id = static_cast<std::uint32_t>(kept[i].token_index);
      write_masks(fs::path(o.out) / (id + ".rle"), kept);
    }
  }
  return kOk;
}

int cmd_compare(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const std::vector<QueryEpisode> train_set = load_split(o.data, "train");
  const std::vector<QueryEpisode> eval_set = load_split(o.data, o.split);
  std::vector<AblationArm> arms = {{"baseline", {}, {}, {}, 0.0, 0.0},
                                   {"vfdec_off", {"vfdec_on=false"}, {}, {}, 0.0, 0.0},
                                   {"cam_off", {"cam_on=false"}, {}, {}, 0.0, 0.0}};
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.seeds; ++i) seeds.push_back(cfg.seed + i);
  arms = run_ablation(cfg, train_set, eval_set, arms, seeds, &std::cout);
  for (const auto& a : arms) std::printf("%-10s median AP %.4f  median MC %.4f\n", a.name.c_str(), a.median_ap, a.median_mc);
  const std::string report = ablation_report_json(arms, cfg);
  if (!o.out.empty()) {
    make_dir(o.out);
    write_text(fs::path(o.out) / "ablation.json", report);
  } else {
    std::cout << report;
  }
  return kOk;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfiguration:
      return kUsage;
    case ErrorKind::kNumerical:
      return kNumerical;
    default:
      return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video reasoning segmentation at desk scale"};
  app.require_subcommand(1);
  Options o;
  auto seed_opt = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Override the config seed")->each([&](const std::string&) { o.seed_given = true; });
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic benchmark");
  gen->add_option("--config", o.config, "Run config JSON");
  gen->add_option("--out", o.out, "Output dataset directory")->required();
  gen->add_option("--ablate", o.ablate, "KEY=VAL override (repeatable)");
  seed_opt(gen);

  auto* tr = app.add_subcommand("train", "Train and write a checkpoint plus loss.csv");
  tr->add_option("--config", o.config, "Run config JSON");
  tr->add_option("--data", o.data, "Dataset directory")->required();
  tr->add_option("--out", o.out, "Output run directory")->required();
  tr->add_option("--ablate", o.ablate, "KEY=VAL override (repeatable)");
  seed_opt(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", o.out, "Directory for the JSON report");

  auto* inf = app.add_subcommand("infer", "Print answers and write predicted tracklets");
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  inf->add_option("--data", o.data, "Dataset directory")->required();
  inf->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  inf->add_option("--episode", o.episode, "Single episode id");
  inf->add_option("--out", o.out, "Directory for predicted masks");

  auto* cmp = app.add_subcommand("compare", "Ablation comparison over several seeds");
  cmp->add_option("--config", o.config, "Run config JSON");
  cmp->add_option("--data", o.data, "Dataset directory")->required();
  cmp->add_option("--split", o.split, "Evaluation split")->check(CLI::IsMember({"train", "val", "test"}));
  cmp->add_option("--seeds", o.seeds, "Number of seeds");
  cmp->add_option("--out", o.out, "Directory for ablation.json");
  cmp->add_option("--ablate", o.ablate, "KEY=VAL override applied to every arm (repeatable)");
  seed_opt(cmp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  try {
    if (gen->parsed()) return cmd_generate(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_eval(o);
    if (inf->parsed()) return cmd_infer(o);
    if (cmp->parsed()) return cmd_compare(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
