#pragma once

// Experiment configuration: a flat `key = value` text file with `#` comments.
// Unknown keys and malformed values are rejected. Keys:
//
//   seed, corruption, severity, stream_length, output_dir
//   objective, lambda, alpha, gamma, beta, lr, momentum, batch_size
//   use_cfl, use_ncl, mask (score|ones), pixel_reduction (mean|sum),
//   params (all|norm_and_head)
//   checkpoint, cache_dir, train_if_missing
//   train_seed, train_steps, train_batch_size, train_lr
//   scene_min_objects, scene_max_objects
//   sweep_lambda, sweep_alpha (comma-separated lists)

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "duo/adaptation.hpp"
#include "duo/toy/scene.hpp"
#include "duo/toy/train.hpp"
#include "json.hpp"

namespace duo::harness {

inline constexpr int kExitMissingCheckpoint = 2;
inline constexpr int kExitConfig = 3;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  toy::Corruption corruption{toy::CorruptionKind::gaussian_noise, 5};
  std::size_t stream_length = 1600;
  AdaptConfig adapt;
  toy::TrainConfig train;
  std::filesystem::path output_dir = "out";
  std::filesystem::path checkpoint;  // empty: use the cache keyed by the training config
  std::filesystem::path cache_dir = "duo_cache";
  bool train_if_missing = true;
  std::vector<double> sweep_lambda{0.1, 0.3, 0.7, 1.0};
  std::vector<double> sweep_alpha{1.0, 2.0, 4.0, 8.0};

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
  std::size_t steps() const { return stream_length / adapt.batch_size; }
};

// Applies `key = value` lines onto `base`. Throws ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
// DUO_SEED, when set, replaces the seed.
void apply_env_overrides(ExperimentConfig& cfg);

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

}  // namespace duo::harness
