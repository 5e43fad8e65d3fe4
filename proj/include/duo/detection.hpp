#pragma once

#include <cstddef>

#include "duo/depth_fusion.hpp"
#include "duo/semantic_loss.hpp"

namespace duo {

// Axis-aligned box in pixel coordinates; u is the column axis, v the row axis.
struct Box {
  double u_min = 0, v_min = 0, u_max = 0, v_max = 0;

  double width() const { return u_max - u_min; }
  double height() const { return v_max - v_min; }
  double center_u() const { return 0.5 * (u_min + u_max); }
  double center_v() const { return 0.5 * (v_min + v_max); }
  double diagonal() const;
  // Whether the centre of pixel (u, v) lies inside the box.
  bool covers_pixel(std::size_t u, std::size_t v) const;
  Box clipped(double width, double height) const;
};

struct Detection {
  Box box;
  // Joint distribution over {background, class 0, ..., class c-1}.
  ProbVector probs;
  // Objectness times the most likely class probability.
  double score = 0.0;
  std::size_t cls = 0;
  HeadSet heads;
  double depth = 0.0;  // fused over heads
  // Location of the emitting cell: image index in the batch and flat cell index.
  std::size_t image = 0;
  std::size_t cell = 0;
};

}  // namespace duo
