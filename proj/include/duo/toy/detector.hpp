#pragma once

// A small fully convolutional detector: two conv/norm/relu/pool stages
// followed by a 5x5 head that predicts, per cell of an 8x12 grid, class
// logits, objectness, box geometry, a dense depth value and three depth
// heads with log-uncertainties.
//
//   head 0: direct regression of log depth and log sigma
//   head 1: box height h,           z = f_scale * exp(s1) / h
//   head 2: ground contact row v_b,  z = f_scale * ground_ratio * exp(s2) / (v_b - horizon)
//
// Heads 1 and 2 propagate a pixel error e on their measured length l into
// depth, sigma = z * e / l. Lengths enter under stop-gradient and e is a
// calibration buffer estimated during source training, so the geometric heads
// expose only the scale corrections s to depth losses while head 0 is free
// per cell.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "duo/autodiff.hpp"
#include "duo/detection.hpp"
#include "duo/nn_ops.hpp"
#include "duo/rng.hpp"
#include "duo/tensor.hpp"

namespace duo::toy {

using ParamMap = std::map<std::string, Tensor>;

inline constexpr std::size_t kNumHeads = 3;

namespace channel {
inline constexpr std::size_t cls = 0;
inline constexpr std::size_t obj = 3;
inline constexpr std::size_t dx = 4;
inline constexpr std::size_t dy = 5;
inline constexpr std::size_t log_h = 6;
inline constexpr std::size_t log_w = 7;
inline constexpr std::size_t dense_depth = 8;
inline constexpr std::size_t reg_depth = 9;
inline constexpr std::size_t reg_log_sigma = 10;
inline constexpr std::size_t contact = 11;
inline constexpr std::size_t count = 12;
}  // namespace channel

struct DetectorConfig {
  std::size_t height = 64;
  std::size_t width = 96;
  std::size_t cell = 8;
  std::size_t trunk1 = 12;
  std::size_t trunk2 = 24;
  double f_scale = 200.0;
  double horizon = 24.0;
  double ground_ratio = 1.2;
  double obj_threshold = 0.3;
  double norm_eps = 1e-5;
  double norm_momentum = 0.1;
  // Constant offsets so that zero head outputs give plausible values.
  double depth_prior = 20.0;
  double height_prior = 14.0;

  std::size_t grid_h() const { return height / cell; }
  std::size_t grid_w() const { return width / cell; }
  void validate() const;
};

enum class NormMode { running, batch };

struct ToyDetector {
  DetectorConfig cfg;
  ParamMap params;
  ParamMap buffers;  // running normalisation statistics and geometric pixel errors

  static ToyDetector init(const DetectorConfig& cfg, Rng& rng);
  static ToyDetector zeros(const DetectorConfig& cfg);
};

// Names of the normalisation-affine and head parameters.
bool is_norm_or_head_param(const std::string& name);

using ParamVars = std::map<std::string, ad::Var>;
// Leaves for parameters selected by `trainable`, constants for the rest.
ParamVars bind_params(ad::Tape& tape, const ParamMap& params,
                      const std::function<bool(const std::string&)>& trainable);

struct DenseOutputs {
  ad::Var class_logits;    // [N, 3, gh, gw]
  ad::Var obj_logit;       // [N, 1, gh, gw]
  ad::Var offset;          // [N, 2, gh, gw]: centre offsets in cells (du, dv)
  ad::Var log_box;         // [N, 2, gh, gw]: log box height, log box width
  ad::Var contact;         // [N, 1, gh, gw]: ground contact row offset in cells
  ad::Var dense_log_depth; // [N, 1, gh, gw]
  ad::Var head_log_z;      // [N, K, gh, gw]
  ad::Var head_log_sigma;  // [N, K, gh, gw]
  ad::Var geo_log_length;  // [N, K-1, gh, gw]: log of the length each geometric head measures
  std::vector<ad::BatchStats> norm_stats;  // filled in batch mode
};

DenseOutputs detector_forward(ad::Tape& tape, const ToyDetector& det, const ParamVars& p, const Tensor& images,
                              NormMode mode);

// Peak cells with objectness >= threshold that are 3x3 local maxima.
std::vector<Detection> decode(const DenseOutputs& out, const DetectorConfig& cfg);

// Joint {background, classes} probabilities at one cell, differentiable.
ad::Var joint_probs(const DenseOutputs& out, std::size_t image, std::size_t cell);
// exp(dense log depth) upsampled to image resolution: [N, H, W].
ad::Var dense_depth_map(const DenseOutputs& out, const DetectorConfig& cfg);
// Per-cell uncertainty-weighted fusion of the depth heads, upsampled to image
// resolution: [N, H, W].
ad::Var fused_depth_map(const DenseOutputs& out, const DetectorConfig& cfg);

struct DetectorResult {
  std::vector<Detection> detections;
  Tensor objectness;  // [N, gh, gw]
  Tensor dense_depth; // [N, H, W]
};
// Inference-only convenience wrapper.
DetectorResult run_detector(const ToyDetector& det, const Tensor& images, NormMode mode = NormMode::running);

// Updates running statistics from batch statistics (exponential average).
void update_running_stats(ToyDetector& det, const std::vector<ad::BatchStats>& stats);
// Exponential average of the geometric heads' pixel errors, mean |z - z*| l / z.
void update_pixel_error(ToyDetector& det, std::span<const double> batch_pixel_err);

}  // namespace duo::toy
