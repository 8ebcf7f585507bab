#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "vidreason/checkpoint.hpp"
#include "vidreason/errors.hpp"
#include "vidreason/run_config.hpp"
#include "vidreason/trainer.hpp"

using namespace vidreason;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.max_iters = 3;
  cfg.batch_size = 2;
  cfg.generator.height = cfg.generator.width = 32;
  cfg.generator.frames = 4;
  cfg.generator.min_size = 3.0;
  cfg.generator.max_size = 6.0;
  cfg.generator.max_instances = 3;
  cfg.generator.episodes = 6;
  cfg.generator.ratios = {0.5, 0.25, 0.25};
  cfg.model.encoder.channels = 8;
  cfg.model.responder.hidden = 16;
  cfg.model.responder.ffn_hidden = 24;
  cfg.model.responder.layers = 1;
  cfg.model.seg_tokens = 2;
  return cfg;
}

std::vector<Tensor> flatten(ModelWeights w) {
  std::vector<Tensor> out;
  w.visit([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vidreason_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + VIDREASON_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config round-trip") {
  RunConfig a;
  CHECK(run_config_from_json_text(to_json_text(a)) == a);
  RunConfig b = tiny_run();
  b.loss.ce_video = 0.8;
  b.optimizer.lr = 2e-5;
  b.model.cam.score = ResponseScore::kMaxLogit;
  b.model.decoder.order = AggregationOrder::kStacked;
  b.generator.template_weights["motion"] = 0.25;
  const RunConfig back = run_config_from_json_text(to_json_text(b));
  CHECK(back == b);
  CHECK(config_digest(back) == config_digest(b));
  CHECK_FALSE(config_digest(a) == config_digest(b));
  CHECK(to_json_text(back) == to_json_text(b));
}

TEST_CASE("config errors and overrides") {
  CHECK_THROWS_AS(run_config_from_json_text("{\"bogus\": 1}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text("{\"optimizer\": {\"lr\": 1e-3, \"momentum\": 0.9}}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text("{not json"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text("{\"optimizer\": {\"lr\": -1}}"), ConfigError);
  CHECK(run_config_from_json_text("{}") == RunConfig{});

  const RunConfig base;
  CHECK(apply_override(base, "optimizer.lr=2e-5").optimizer.lr == 2e-5);
  CHECK_FALSE(apply_override(base, "cam_on=false").model.cam_on);
  CHECK_FALSE(apply_override(base, "vfdec_on=false").model.decoder.frame_video);
  CHECK(apply_override(base, "residual_in_eq1=true").model.cam.residual);
  CHECK(apply_override(base, "aggregation_strategy=fusion").model.decoder.strategy ==
        AggregationStrategy::kFeatureFusion);
  const RunConfig two = apply_override(base, "scale_count=2");
  CHECK(two.model.decoder.layers == 2);
  CHECK(two.model.encoder.scales == 2);
  CHECK_THROWS_AS(apply_override(base, "nonsense=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(base, "optimizer.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(base, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(base, "aggregation_strategy=feature_fusion"), ConfigError);
}

TEST_CASE("checkpoint round-trip reproduces the forward pass") {
  const RunConfig cfg = tiny_run();
  const Vocabulary vocab = Vocabulary::standard(cfg.model.seg_tokens);
  auto [manifest, episodes] = generate_dataset(cfg);
  const TrainState st = train(cfg, episodes, vocab);
  ModelWeights w = st.weights;
  const Checkpoint ck = make_checkpoint(w, st.adam, st.iteration, to_json_text(cfg), config_digest(cfg), vocab);
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "c.bin", ck);
  const Checkpoint back = load_checkpoint(dir / "c.bin");
  CHECK(back == ck);
  CHECK(back.iteration == 3);

  ModelWeights fresh = ModelWeights::init(cfg.model, vocab, 12345);
  restore_weights(back, fresh);
  const auto a = flatten(st.weights), b = flatten(fresh);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  const Prediction p1 = predict(episodes[0].clip, episodes[0].query, st.weights, cfg.model, vocab);
  const Prediction p2 = predict(episodes[0].clip, episodes[0].query, fresh, cfg.model, vocab);
  CHECK(p1.text_tokens == p2.text_tokens);
  REQUIRE(p1.tracklets.size() == p2.tracklets.size());
  for (std::size_t i = 0; i < p1.tracklets.size(); ++i) CHECK(p1.tracklets[i] == p2.tracklets[i]);

  // a different architecture cannot absorb the snapshot
  RunConfig other = cfg;
  other.model.responder.hidden = 8;
  ModelWeights mismatched = ModelWeights::init(other.model, vocab, 1);
  CHECK_THROWS_AS(restore_weights(back, mismatched), FormatError);
  Checkpoint missing = back;
  missing.params.pop_back();
  CHECK_THROWS_AS(restore_weights(missing, fresh), FormatError);

  // version and truncation errors
  std::string bytes = read_file(dir / "c.bin");
  std::string bumped = bytes;
  bumped[4] = static_cast<char>(kCheckpointVersion + 1);
  std::ofstream(dir / "v.bin", std::ios::binary) << bumped;
  CHECK_THROWS_AS(load_checkpoint(dir / "v.bin"), FormatError);
  std::ofstream(dir / "t.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.bin"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic") {
  const RunConfig cfg = tiny_run();
  const Vocabulary vocab = Vocabulary::standard(cfg.model.seg_tokens);
  auto [manifest, episodes] = generate_dataset(cfg);
  const TrainState a = train(cfg, episodes, vocab), b = train(cfg, episodes, vocab);
  REQUIRE(a.curve.size() == 3);
  std::ostringstream ca, cb;
  for (const auto& r : a.curve) ca << loss_csv_line(r) << "\n";
  for (const auto& r : b.curve) cb << loss_csv_line(r) << "\n";
  CHECK(ca.str() == cb.str());
  const auto wa = flatten(a.weights), wb = flatten(b.weights);
  for (std::size_t i = 0; i < wa.size(); ++i) CHECK(wa[i] == wb[i]);
  CHECK(a.adam == b.adam);
  for (const auto& r : a.curve) CHECK(std::isfinite(r.total));
}

TEST_CASE("zero iterations leave the initialization") {
  RunConfig cfg = tiny_run();
  cfg.max_iters = 0;
  const Vocabulary vocab = Vocabulary::standard(cfg.model.seg_tokens);
  auto [manifest, episodes] = generate_dataset(cfg);
  const TrainState st = train(cfg, episodes, vocab);
  CHECK(st.iteration == 0);
  CHECK(st.curve.empty());
  const auto got = flatten(st.weights), want = flatten(init_train_state(cfg, vocab).weights);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("loss csv line") {
  LossRow r;
  r.iter = 7;
  r.total = 1.5;
  r.parts.txt = 0.25;
  r.parts.dice_v = 0.125;
  const std::string line = loss_csv_line(r);
  CHECK(line.rfind("7,", 0) == 0);
  std::size_t commas = 0;
  for (char c : line) commas += c == ',';
  CHECK(commas == 6);
  CHECK(std::string(kLossCsvHeader) == "iter,total,txt,ce_f,ce_v,dice_f,dice_v");
}

TEST_CASE("ground truth scores perfectly against itself") {
  RunConfig cfg = tiny_run();
  cfg.generator.episodes = 12;
  auto [manifest, episodes] = generate_dataset(cfg);
  std::vector<std::vector<MaskTracklet>> preds;
  for (const auto& ep : episodes) preds.push_back(ep.tracklets);
  const EvalResult r = evaluate_predictions(episodes, preds);
  CHECK(r.j == 1.0);
  CHECK(r.f == 1.0);
  CHECK(r.jf_mean == 1.0);
  CHECK(r.ap == 1.0);
  CHECK(r.ap50 == 1.0);
  CHECK(r.ar == 1.0);
  CHECK(r.mc_accuracy == 1.0);

  std::vector<std::vector<MaskTracklet>> none(episodes.size());
  const EvalResult z = evaluate_predictions(episodes, none);
  CHECK(z.ap == 0.0);
  CHECK(z.ar == 0.0);
}

TEST_CASE("multiple-choice rule") {
  RunConfig cfg = tiny_run();
  auto [manifest, episodes] = generate_dataset(cfg);
  for (const auto& ep : episodes) {
    CHECK(answer_multiple_choice(ep.mc, ep.clip, ep.tracklets) == ep.mc.key);
    const std::size_t unsure = answer_multiple_choice(ep.mc, ep.clip, {});
    const auto it = std::find(ep.mc.options.begin(), ep.mc.options.end(), kNotSure);
    if (it != ep.mc.options.end()) CHECK(unsure == static_cast<std::size_t>(it - ep.mc.options.begin()));
  }
}

TEST_CASE("cli end to end and exit codes") {
  const fs::path dir = scratch("cli");
  RunConfig cfg = tiny_run();
  cfg.max_iters = 2;
  {
    std::ofstream(dir / "cfg.json") << to_json_text(cfg);
  }
  const fs::path log = dir / "log.txt";
  const std::string data = (dir / "data").string(), run = (dir / "run").string();

  CHECK(run_cli("generate --config " + (dir / "cfg.json").string() + " --out " + data, log) == 0);
  CHECK(read_file(log).find("train: 3") != std::string::npos);
  const std::string digest1 = read_file(log);
  CHECK(run_cli("generate --config " + (dir / "cfg.json").string() + " --out " + (dir / "data2").string(), log) == 0);
  CHECK(read_file(log) == digest1);

  CHECK(run_cli("train --config " + (dir / "cfg.json").string() + " --data " + data + " --out " + run, log) == 0);
  const std::string csv = read_file(fs::path(run) / "loss.csv");
  CHECK(csv.rfind("iter,total,txt,ce_f,ce_v,dice_f,dice_v\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(fs::exists(fs::path(run) / "checkpoint.bin"));

  const std::string ck = (fs::path(run) / "checkpoint.bin").string();
  CHECK(run_cli("eval --checkpoint " + ck + " --data " + data + " --split val --out " + run, log) == 0);
  const std::string report = read_file(fs::path(run) / "report_val.json");
  CHECK(report.find("config_digest") != std::string::npos);
  CHECK(report.find("mc_accuracy") != std::string::npos);
  CHECK(run_cli("infer --checkpoint " + ck + " --data " + data + " --split test --out " + (dir / "pred").string(), log) == 0);

  // usage and configuration errors
  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("frobnicate", log) == 1);
  CHECK(run_cli("train --data " + data, log) == 1);
  {
    std::ofstream(dir / "bad.json") << "{\"optimizer\": {\"lrr\": 1}}";
  }
  CHECK(run_cli("generate --config " + (dir / "bad.json").string() + " --out " + (dir / "x").string(), log) == 1);
  CHECK(run_cli("generate --out " + (dir / "x").string() + " --ablate generator.episodes=2", log) == 1);
  // data and format errors
  CHECK(run_cli("eval --checkpoint " + ck + " --data " + (dir / "missing").string(), log) == 2);
  CHECK(run_cli("eval --checkpoint " + (dir / "cfg.json").string() + " --data " + data, log) == 2);
  fs::remove_all(dir);
}
