#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "vidreason/checkpoint.hpp"
#include "vidreason/dataset_io.hpp"
#include "vidreason/metrics.hpp"
#include "vidreason/run_config.hpp"

namespace vidreason {

struct LossRow {
  std::size_t iter = 0;
  double total = 0.0;
  LossComponents parts;
};

inline constexpr const char* kLossCsvHeader = "iter,total,txt,ce_f,ce_v,dice_f,dice_v";
std::string loss_csv_line(const LossRow& row);

struct TrainState {
  ModelWeights weights;
  AdamState adam;
  std::size_t iteration = 0;
  std::vector<LossRow> curve;
};

TrainState init_train_state(const RunConfig& cfg, const Vocabulary& vocab);

/// Called after iteration `iter` completes (used for periodic checkpoints).
using IterationHook = std::function<void(const TrainState&)>;

/// Runs cfg.max_iters AdamW steps over batches drawn from `episodes` in
/// seeded, epoch-shuffled order. Throws NumericalError on a non-finite loss.
TrainState train(const RunConfig& cfg, const std::vector<QueryEpisode>& episodes, const Vocabulary& vocab,
                 const IterationHook& hook = nullptr);

/// Mean loss over `episodes` without updating anything.
LossReport mean_loss(const std::vector<QueryEpisode>& episodes, const ModelWeights& w, const RunConfig& cfg,
                     const Vocabulary& vocab);

inline constexpr const char* kMcRule =
    "highest-confidence non-empty predicted tracklet; mean clip color inside its mask; option with the nearest "
    "palette color (ties to the lower index); 'not sure' only when no tracklet is non-empty";

/// Applies kMcRule.
std::size_t answer_multiple_choice(const MultipleChoice& mc, const VideoClip& clip,
                                   const std::vector<MaskTracklet>& predictions);

/// Pixelwise union of tracklets (shape taken from `like`).
MaskTracklet union_of(const std::vector<MaskTracklet>& tracklets, const MaskTracklet& like);

/// Scores already-made predictions: J and F on the union masks, pooled AP/AR,
/// MC accuracy. Empty predicted tracklets are dropped.
EvalResult evaluate_predictions(const std::vector<QueryEpisode>& episodes,
                                const std::vector<std::vector<MaskTracklet>>& predictions);
EvalResult evaluate_model(const std::vector<QueryEpisode>& episodes, const ModelWeights& w, const ModelConfig& cfg,
                          const Vocabulary& vocab);

std::string eval_report_json(const EvalResult& r, const RunConfig& cfg);

std::vector<QueryEpisode> load_split(const std::filesystem::path& dir, const std::string& split);
/// Generates cfg.generator.episodes episodes and the manifest in memory.
std::pair<DatasetManifest, std::vector<QueryEpisode>> generate_dataset(const RunConfig& cfg);

struct AblationArm {
  std::string name;
  std::vector<std::string> overrides;
  std::vector<double> ap;
  std::vector<double> mc;
  double median_ap = 0.0;
  double median_mc = 0.0;
};

double median(std::vector<double> v);

/// Trains and evaluates every arm for each seed; arms see identical data.
std::vector<AblationArm> run_ablation(const RunConfig& base, const std::vector<QueryEpisode>& train_set,
                                      const std::vector<QueryEpisode>& eval_set, std::vector<AblationArm> arms,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);
std::string ablation_report_json(const std::vector<AblationArm>& arms, const RunConfig& base);

}  // namespace vidreason
