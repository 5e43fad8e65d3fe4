#pragma once

// Depth-map upsampling, Sobel gradients, surface normals and the edge-aware
// normal consistency loss. Grids are tensors whose trailing two axes are
// (rows v, columns u); any leading axes are treated as a batch.

#include <cstddef>

#include "duo/autodiff.hpp"
#include "duo/tensor.hpp"

namespace duo {

// Scale applied to the integer Sobel kernels so a unit ramp has gradient 1.
inline constexpr double kSobelScale = 1.0 / 8.0;

struct GradientField {
  Tensor gx;  // along u (columns)
  Tensor gy;  // along v (rows)
};

struct NormalField {
  Tensor nx, ny, nz;
};

struct SmoothnessTerms {
  Tensor psi_x, psi_y;
};

Tensor bilinear_upsample(const Tensor& depth, std::size_t out_h, std::size_t out_w);
GradientField sobel_gradients(const Tensor& depth);
NormalField normal_field(const GradientField& g);
SmoothnessTerms smoothness_terms(const NormalField& n);
Tensor edge_weight(const Tensor& intensity);
// (psi_x + psi_y) * edge_weight(intensity), per pixel.
Tensor normal_consistency_loss(const Tensor& depth, const Tensor& intensity);

// 0.299 R + 0.587 G + 0.114 B over the channel axis of [3,H,W] or [N,3,H,W].
Tensor luma(const Tensor& rgb);

namespace ad {

struct GradientVars {
  Var gx, gy;
};
struct NormalVars {
  Var nx, ny, nz;
};

Var bilinear_upsample(Var depth, std::size_t out_h, std::size_t out_w);
GradientVars sobel_gradients(Var depth);
NormalVars normal_field(const GradientVars& g);
// psi_x + psi_y
Var smoothness(const NormalVars& n);
// Per-pixel loss grid; `weight` is the precomputed edge weight (constant).
Var normal_consistency_loss(Var depth, const Tensor& weight);

}  // namespace ad

}  // namespace duo
