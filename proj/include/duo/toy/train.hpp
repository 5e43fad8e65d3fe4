#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duo/semantic_loss.hpp"
#include "duo/toy/detector.hpp"
#include "duo/toy/scene.hpp"

namespace duo::toy {

struct TrainConfig {
  std::uint64_t seed = 7;
  int steps = 3000;
  std::size_t batch_size = 8;
  double lr = 0.02;
  double momentum = 0.9;
  double grad_clip = 10.0;
  FocalParams focal;
  double obj_pos_weight = 4.0;
  double depth_weight = 0.2;
  SceneConfig scene;
  DetectorConfig detector;
  int log_every = 100;

  void validate() const;
  // Stable text form of every field; used to key cached checkpoints.
  std::string fingerprint() const;
};

struct TrainLogEntry {
  int step = 0;
  double total = 0, focal = 0, objectness = 0, box = 0, depth_heads = 0, dense = 0;
};

struct TrainResult {
  ToyDetector detector;
  std::vector<TrainLogEntry> log;
};

// Per-image targets on the detector grid.
struct CellTargets {
  std::vector<std::size_t> cells;  // responsible cell of each object
  std::vector<std::size_t> objects;
  // Cells that regress box size and depth: the responsible cells plus every
  // cell whose centre lies inside a box (nearest object wins).
  std::vector<std::size_t> geo_cells;
  std::vector<std::size_t> geo_objects;
};
CellTargets assign_cells(const Scene& scene, const DetectorConfig& cfg);

// Scenes of training batch `step` (clean, deterministic in seed and step).
std::vector<Scene> training_batch(const TrainConfig& cfg, int step);

// Throws NonFiniteError naming the step if the loss diverges.
TrainResult source_train(const TrainConfig& cfg);

// Batched [N,3,H,W] tensor from scene images.
Tensor stack_images(const std::vector<Scene>& scenes);
Tensor stack_images(const std::vector<Tensor>& images);

void save_checkpoint(const std::filesystem::path& path, const ToyDetector& det);
// Throws FormatError when the file is missing or malformed.
ToyDetector load_checkpoint(const std::filesystem::path& path, const DetectorConfig& cfg);

}  // namespace duo::toy
