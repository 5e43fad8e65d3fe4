#pragma once

// Online test-time adaptation: the EMA reliability threshold, the
// score-weighted region mask, the combined semantic + geometric objective,
// the two baseline objectives and one adaptation step over a batch.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "duo/autodiff.hpp"
#include "duo/detection.hpp"
#include "duo/optim.hpp"
#include "duo/semantic_loss.hpp"
#include "duo/tensor.hpp"
#include "duo/toy/detector.hpp"

namespace duo {

enum class Objective { duo, entropy_min, depth_unc_min, none };
std::string to_string(Objective o);
// Throws ContractViolation for an unknown name.
Objective parse_objective(const std::string& name);

enum class MaskMode {
  score,  // max score over selected boxes
  ones,   // every pixel weighted 1
};

enum class PixelReduction { mean, sum };

enum class ParamSubset {
  all,
  norm_and_head,
};

enum class NormStats {
  automatic,  // batch statistics when adapting, running statistics otherwise
  running,
  batch,
};

struct AdaptConfig {
  Objective objective = Objective::duo;
  double lambda = 0.7;
  FocalParams focal;
  double beta = 0.1;
  double lr = 2e-5;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  bool use_cfl = true;
  bool use_ncl = true;
  MaskMode mask = MaskMode::score;
  PixelReduction pixel_reduction = PixelReduction::mean;
  ParamSubset params = ParamSubset::all;
  NormStats norm_stats = NormStats::automatic;
  CflGradient cfl_gradient = CflGradient::pseudo_label;

  void validate() const;
  toy::NormMode norm_mode() const;
  bool adapts() const { return objective != Objective::none; }
};

struct EmaThreshold {
  double u_bar = 0.0;
  double beta = 0.1;
  bool initialized = false;
};

// u_bar <- beta * mean(U) + (1 - beta) * u_bar, or mean(U) on the first call.
// An empty U leaves the threshold unchanged.
EmaThreshold ema_update(const EmaThreshold& ema, std::span<const double> u);

// Indices i with U_i <= u_bar.
std::vector<std::size_t> select_reliable(std::span<const double> u, const EmaThreshold& ema);

// [H, W] mask: max score over selected boxes covering each pixel centre.
Tensor region_mask(const std::vector<Detection>& dets, std::span<const std::size_t> selected, std::size_t height,
                   std::size_t width);
// [N, H, W] mask, placing each detection by its image index.
Tensor region_mask(const std::vector<Detection>& dets, std::span<const std::size_t> selected, std::size_t images,
                   std::size_t height, std::size_t width);

struct ObjectiveValue {
  ad::Var total;
  double semantic = 0.0;
  double geometric = 0.0;  // lambda already applied
  std::size_t selected = 0;
  // True when no term carries a gradient (nothing to adapt on).
  bool empty = false;
};

// sum_i L_CFL(p_i) + lambda * reduce(M * L_NCL). `probs` holds one joint
// probability vector per detection; `depth` is [H, W] or [N, H, W] and
// `intensity` matches it. The EMA is updated with this batch before
// selection.
ObjectiveValue duo_objective(const std::vector<ad::Var>& probs, const std::vector<Detection>& dets, ad::Var depth,
                             const Tensor& intensity, EmaThreshold& ema, const AdaptConfig& cfg);

// sum_i H(p_i)
ObjectiveValue entropy_min_objective(const std::vector<ad::Var>& probs);

// sum over detections of the regression loss against their own fused depth.
// z and log_sigma are [M, K].
ObjectiveValue depth_unc_min_objective(ad::Var z, ad::Var log_sigma);

struct AdaptState {
  toy::ToyDetector model;
  TensorMap momentum_buffers;
  EmaThreshold ema;
  std::size_t step_count = 0;
  AdaptConfig config;

  static AdaptState create(toy::ToyDetector model, const AdaptConfig& cfg);
};

struct StepMetrics {
  std::size_t step = 0;
  Objective objective = Objective::none;
  std::size_t n_dets = 0;
  double objective_value = 0.0;
  double mean_entropy = 0.0;
  double mean_cfl = 0.0;
  double mean_ncl = 0.0;  // unmasked, over all pixels of the batch
  std::vector<double> mean_log_sigma;  // per head, over detections
  double score_q25 = 0.0, score_q50 = 0.0, score_q75 = 0.0;
  std::size_t selected = 0;
  bool skipped = false;
  std::string skip_reason;
};

struct StepResult {
  std::vector<Detection> detections;  // from the pre-update parameters
  Tensor objectness;                  // [N, gh, gw], pre-update
  Tensor class_probs;                 // [N, C, gh, gw] softmax, pre-update
  StepMetrics metrics;
};

// Forward pass, emission, objective and one SGD-momentum update. A step with
// nothing to adapt on or with a non-finite gradient leaves parameters and
// momentum buffers untouched and is marked skipped.
StepResult tta_step(AdaptState& state, const Tensor& images);

}  // namespace duo
