#pragma once

// Corrupted scene streams, the online adaptation run over a stream and the
// comparison experiments built on it. Every result is a pure function of the
// configuration and the source checkpoint.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "duo/adaptation.hpp"
#include "duo/harness/config.hpp"
#include "duo/toy/detector.hpp"
#include "duo/toy/evaluate.hpp"
#include "duo/toy/scene.hpp"
#include "json.hpp"

namespace duo::harness {

class MissingCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StreamBatch {
  std::vector<toy::Scene> scenes;  // clean scenes with ground truth
  Tensor images;                   // [N, 3, H, W] corrupted
};

// Scene i of the stream uses Rng(seed).fork(i); its corruption noise uses a
// fork of that scene stream, so batches can be drawn in any order.
StreamBatch stream_batch(const ExperimentConfig& cfg, std::size_t batch);

// `checkpoint` if set, else <cache_dir>/source_<hash of the training config>.duoc.
std::filesystem::path checkpoint_path(const ExperimentConfig& cfg);
toy::ToyDetector train_source_model(const ExperimentConfig& cfg, std::ostream* log);
// Loads the checkpoint, training and caching it first when it is missing and
// train_if_missing is set. Throws MissingCheckpointError otherwise.
toy::ToyDetector obtain_source_model(const ExperimentConfig& cfg, std::ostream* log);

// Source model on `scenes` clean scenes drawn from a stream disjoint from
// training and adaptation.
toy::EvalRecord evaluate_clean(const ExperimentConfig& cfg, const toy::ToyDetector& det, std::size_t scenes = 200);

struct StepRow {
  StepMetrics metrics;
  double f1_running = 0.0;
  double mae_running = 0.0;
};

struct StreamResult {
  ExperimentConfig config;
  std::vector<StepRow> rows;
  toy::EvalRecord summary;
  // Score (objectness x max class probability) at the responsible cell of
  // every ground-truth object, in stream order. Independent of emission.
  std::vector<double> anchored_scores;
  std::size_t skipped_steps = 0;
};

StreamResult run_stream(const ExperimentConfig& cfg, const toy::ToyDetector& source);

// Header: step,objective,n_dets,mean_entropy,mean_cfl,mean_ncl,logsig_head0,
// logsig_head1,logsig_head2,f1_running,mae_running,skipped
std::string metrics_csv(const StreamResult& r);
nlohmann::ordered_json summary_json(const StreamResult& r);
// metrics.csv and summary.json under `dir`.
void write_stream_outputs(const StreamResult& r, const std::filesystem::path& dir);

// Runs streams against one source model, reusing results of identical configs.
class Runner {
 public:
  explicit Runner(toy::ToyDetector source, std::ostream* log = nullptr) : source_(std::move(source)), log_(log) {}
  const StreamResult& run(const ExperimentConfig& cfg);
  const toy::ToyDetector& source() const { return source_; }

 private:
  toy::ToyDetector source_;
  std::ostream* log_;
  std::map<std::string, StreamResult> cache_;
};

ExperimentConfig with_objective(ExperimentConfig cfg, Objective o);

struct Obs1Method {
  Objective objective = Objective::none;
  double q25 = 0.0, q75 = 0.0;
  double delta_q25 = 0.0, delta_q75 = 0.0;
  double skew = 0.0;  // delta_q75 / max(delta_q25, 1e-3)
  double f1 = 0.0;
};

struct Obs1Report {
  std::vector<Obs1Method> methods;  // none, entropy_min, duo
  bool low_score_gain = false;      // delta_q25(duo) > delta_q25(entropy_min)
  bool smaller_skew = false;        // skew(duo) < skew(entropy_min)
};

Obs1Report run_observation1(Runner& runner, const ExperimentConfig& cfg);
nlohmann::ordered_json to_json(const Obs1Report& r);

struct Obs2Method {
  Objective objective = Objective::none;
  // Per-step mean log sigma of each head over emitted detections; steps
  // without detections repeat the previous value.
  std::vector<std::array<double, toy::kNumHeads>> trajectory;
  std::array<double, toy::kNumHeads> drop{};  // mean of first 10% of steps minus last 10%
  double collapse_ratio = 0.0;  // drop[0] / max(mean(drop[1..]), 0.05)
  // min over steps of sigma_k(t) / sigma_k(0)
  std::array<double, toy::kNumHeads> min_sigma_fraction{};
};

struct Obs2Report {
  std::vector<Obs2Method> methods;  // depth_unc_min, duo
  bool ratio_exceeds_twice = false;
  bool duo_sigma_floor = false;  // no head below 10% of its source sigma under duo
  bool step0_identical = false;
};

Obs2Report run_observation2(Runner& runner, const ExperimentConfig& cfg);
nlohmann::ordered_json to_json(const Obs2Report& r);
// step,method,logsig_head0,logsig_head1,logsig_head2
std::string trajectory_csv(const Obs2Report& r);

struct AblationRow {
  std::string name;
  bool cfl = false, ncl = false, mask = false;
  double f1 = 0.0, mae = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // Src, CFL, NCL, CFL+NCL, NCL+M, CFL+NCL+M
  bool full_beats_single = false;
  bool masked_ncl_not_worse = false;
};

AblationReport run_ablation(Runner& runner, const ExperimentConfig& cfg);
nlohmann::ordered_json to_json(const AblationReport& r);
std::string ablation_csv(const AblationReport& r);

struct SweepRow {
  double lambda = 0.0, alpha = 0.0;
  double f1 = 0.0, mae = 0.0;
};
std::vector<SweepRow> run_sweep(Runner& runner, const ExperimentConfig& cfg);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// DUOT dumps of one stream batch (clean and corrupted images, ground-truth
// depth, objectness, fused depth, NCL map, region mask) plus dump.json with
// boxes, classes and depths of ground truth and detections.
void dump_batch(const ExperimentConfig& cfg, const toy::ToyDetector& source, std::size_t batch,
                const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace duo::harness
