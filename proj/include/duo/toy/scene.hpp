#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "duo/detection.hpp"
#include "duo/rng.hpp"
#include "duo/tensor.hpp"

namespace duo::toy {

inline constexpr std::size_t kNumClasses = 3;  // car, pedestrian, cyclist

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 96;
  int min_objects = 1;
  int max_objects = 4;
  // Depth of an object is f_scale / box height.
  double f_scale = 200.0;
  std::size_t horizon = 24;
  int min_box_height = 8;
  int max_box_height = 28;
  // Camera height over object height; places the box bottom on the ground.
  double ground_ratio = 1.2;
  double far_depth = 80.0;

  void validate() const;
};

struct GtObject {
  Box box;
  std::size_t cls = 0;
  double depth = 0.0;
};

struct Scene {
  Tensor image;  // [3, H, W] in [0, 1]
  Tensor depth;  // [H, W] dense ground-truth depth
  std::vector<GtObject> objects;
  std::uint64_t seed = 0;
};

Scene generate_scene(Rng& rng, const SceneConfig& cfg);
double depth_from_height(double box_height, const SceneConfig& cfg);

enum class CorruptionKind { gaussian_noise, shot_noise, brightness, contrast, pixelate, fog_haze };

inline constexpr CorruptionKind kAllCorruptions[] = {
    CorruptionKind::gaussian_noise, CorruptionKind::shot_noise, CorruptionKind::brightness,
    CorruptionKind::contrast,       CorruptionKind::pixelate,   CorruptionKind::fog_haze};

struct Corruption {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;
};

std::string to_string(CorruptionKind kind);
// Throws ContractViolation on an unknown name.
CorruptionKind parse_corruption(std::string_view name);

// Severity-indexed parameter of each corruption (index 0 is severity 1).
double corruption_parameter(CorruptionKind kind, int severity);

// Applies the corruption to a [3, H, W] image; output clipped to [0, 1].
Tensor corrupt(const Tensor& image, const Corruption& c, Rng& rng);

}  // namespace duo::toy
