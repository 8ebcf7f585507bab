#include "vidreason/run_config.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "vidreason/digest.hpp"
#include "vidreason/errors.hpp"

namespace vidreason {

using nlohmann::json;

namespace {

// Reads fields of one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }
  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
    } else {
      double v = 0.0;
      get(key, v);
      out = v;
    }
  }
  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string score_name(ResponseScore s) { return s == ResponseScore::kMaxWeight ? "max_weight" : "max_logit"; }
ResponseScore parse_score(const std::string& s) {
  if (s == "max_weight") return ResponseScore::kMaxWeight;
  if (s == "max_logit") return ResponseScore::kMaxLogit;
  throw ConfigError("unknown CAM score '" + s + "'");
}
std::string strategy_name(AggregationStrategy s) {
  return s == AggregationStrategy::kEmbeddingSimilarity ? "similarity" : "fusion";
}
AggregationStrategy parse_strategy(const std::string& s) {
  if (s == "similarity") return AggregationStrategy::kEmbeddingSimilarity;
  if (s == "fusion") return AggregationStrategy::kFeatureFusion;
  throw ConfigError("unknown aggregation strategy '" + s + "'");
}
std::string order_name(AggregationOrder o) { return o == AggregationOrder::kSequential ? "sequential" : "stacked"; }
AggregationOrder parse_order(const std::string& s) {
  if (s == "sequential") return AggregationOrder::kSequential;
  if (s == "stacked") return AggregationOrder::kStacked;
  throw ConfigError("unknown aggregation order '" + s + "'");
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const RunConfig& c) {
  const ModelConfig& m = c.model;
  return {
      {"seed", c.seed},
      {"max_iters", c.max_iters},
      {"batch_size", c.batch_size},
      {"save_every", c.save_every},
      {"seg_tokens", m.seg_tokens},
      {"encoder", {{"patch", m.encoder.patch}, {"channels", m.encoder.channels}}},
      {"cam",
       {{"queries", m.cam.queries}, {"keep", m.cam.keep}, {"score", score_name(m.cam.score)}, {"scaled", m.cam.scaled}}},
      {"responder",
       {{"layers", m.responder.layers},
        {"hidden", m.responder.hidden},
        {"heads", m.responder.heads},
        {"max_len", m.responder.max_len},
        {"ffn_hidden", m.responder.ffn_hidden},
        {"max_answer_words", m.responder.max_answer_words}}},
      {"decoder",
       {{"gamma", m.decoder.gamma},
        {"mask_threshold", m.decoder.mask_threshold},
        {"aggregation_order", order_name(m.decoder.order)},
        {"masked_attention", m.decoder.masked_attention},
        {"scaled", m.decoder.scaled}}},
      {"ablation",
       {{"cam_on", m.cam_on},
        {"vfdec_on", m.decoder.frame_video},
        {"aggregation_strategy", strategy_name(m.decoder.strategy)},
        {"scale_count", m.decoder.layers},
        {"residual_in_eq1", m.cam.residual}}},
      {"loss",
       {{"txt", c.loss.txt},
        {"mask", c.loss.mask},
        {"ce", c.loss.ce},
        {"dice", c.loss.dice},
        {"ce_frame", optional_json(c.loss.ce_frame)},
        {"ce_video", optional_json(c.loss.ce_video)}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"weight_decay", c.optimizer.weight_decay},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"warmup_iters", c.optimizer.warmup_iters}}},
      {"generator",
       {{"height", c.generator.height},
        {"width", c.generator.width},
        {"frames", c.generator.frames},
        {"min_instances", c.generator.min_instances},
        {"max_instances", c.generator.max_instances},
        {"min_size", c.generator.min_size},
        {"max_size", c.generator.max_size},
        {"circular_fraction", c.generator.circular_fraction},
        {"episodes", c.generator.episodes},
        {"ratios", c.generator.ratios},
        {"template_weights", c.generator.template_weights},
        {"max_retries", c.generator.max_retries}}},
  };
}

RunConfig from_json(const json& j) {
  RunConfig c;
  ModelConfig& m = c.model;
  Section root(j, "config");
  root.get("seed", c.seed);
  root.get("max_iters", c.max_iters);
  root.get("batch_size", c.batch_size);
  root.get("save_every", c.save_every);
  root.get("seg_tokens", m.seg_tokens);
  {
    Section s = root.child("encoder");
    s.get("patch", m.encoder.patch);
    s.get("channels", m.encoder.channels);
    s.finish();
  }
  {
    Section s = root.child("cam");
    s.get("queries", m.cam.queries);
    s.get("keep", m.cam.keep);
    std::string score = score_name(m.cam.score);
    s.get("score", score);
    m.cam.score = parse_score(score);
    s.get("scaled", m.cam.scaled);
    s.finish();
  }
  {
    Section s = root.child("responder");
    s.get("layers", m.responder.layers);
    s.get("hidden", m.responder.hidden);
    s.get("heads", m.responder.heads);
    s.get("max_len", m.responder.max_len);
    s.get("ffn_hidden", m.responder.ffn_hidden);
    s.get("max_answer_words", m.responder.max_answer_words);
    s.finish();
  }
  {
    Section s = root.child("decoder");
    s.get("gamma", m.decoder.gamma);
    s.get("mask_threshold", m.decoder.mask_threshold);
    std::string order = order_name(m.decoder.order);
    s.get("aggregation_order", order);
    m.decoder.order = parse_order(order);
    s.get("masked_attention", m.decoder.masked_attention);
    s.get("scaled", m.decoder.scaled);
    s.finish();
  }
  {
    Section s = root.child("ablation");
    s.get("cam_on", m.cam_on);
    s.get("vfdec_on", m.decoder.frame_video);
    std::string strategy = strategy_name(m.decoder.strategy);
    s.get("aggregation_strategy", strategy);
    m.decoder.strategy = parse_strategy(strategy);
    std::size_t scales = m.decoder.layers;
    s.get("scale_count", scales);
    m.decoder.layers = scales;
    m.encoder.scales = scales;
    s.get("residual_in_eq1", m.cam.residual);
    s.finish();
  }
  {
    Section s = root.child("loss");
    s.get("txt", c.loss.txt);
    s.get("mask", c.loss.mask);
    s.get("ce", c.loss.ce);
    s.get("dice", c.loss.dice);
    s.get_optional("ce_frame", c.loss.ce_frame);
    s.get_optional("ce_video", c.loss.ce_video);
    s.finish();
  }
  {
    Section s = root.child("optimizer");
    s.get("lr", c.optimizer.lr);
    s.get("weight_decay", c.optimizer.weight_decay);
    s.get("beta1", c.optimizer.beta1);
    s.get("beta2", c.optimizer.beta2);
    s.get("eps", c.optimizer.eps);
    s.get("warmup_iters", c.optimizer.warmup_iters);
    s.finish();
  }
  {
    Section s = root.child("generator");
    GeneratorConfig& g = c.generator;
    s.get("height", g.height);
    s.get("width", g.width);
    s.get("frames", g.frames);
    s.get("min_instances", g.min_instances);
    s.get("max_instances", g.max_instances);
    s.get("min_size", g.min_size);
    s.get("max_size", g.max_size);
    s.get("circular_fraction", g.circular_fraction);
    s.get("episodes", g.episodes);
    s.get("ratios", g.ratios);
    s.get("template_weights", g.template_weights);
    s.get("max_retries", g.max_retries);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  optimizer.validate();
  generator.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t span = model.encoder.patch << (model.encoder.scales - 1);
  if (generator.height % span != 0 || generator.width % span != 0) {
    throw ConfigError("canvas must be divisible by patch * 2^(scales-1) = " + std::to_string(span));
  }
}

std::string to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return run_config_from_json_text(std::string(std::istreambuf_iterator<char>(in), {}));
}

std::string config_digest(const RunConfig& cfg) { return hex_digest(to_json(cfg).dump()); }

RunConfig apply_override(const RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VAL");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json j = to_json(cfg);
  std::string pointer = "/";
  if (key.find('.') == std::string::npos && j.at("ablation").contains(key)) {
    pointer += "ablation/" + key;
  } else {
    for (char ch : key) pointer += ch == '.' ? '/' : ch;
  }
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) throw ConfigError("override names unknown key '" + key + "'");
  j[ptr] = value;
  return from_json(j);
}

}  // namespace vidreason
