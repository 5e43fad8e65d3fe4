#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "duo/autodiff.hpp"

namespace duo::ad {

// Sparse linear operator acting on the trailing two (H, W) axes of a tensor:
// out[..., r] = sum_k weight[k] * in[..., col[k]] for k in [row_start[r], row_start[r+1]).
struct PlaneMap {
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<std::size_t> row_start;
  std::vector<std::uint32_t> col;
  std::vector<double> weight;

  Tensor apply(const Tensor& x) const;
  // Accumulates M^T g into gx.
  void apply_transpose_add(const Tensor& g, Tensor& gx) const;
};

using PlaneMapPtr = std::shared_ptr<const PlaneMap>;

// Replicate-padded 3x3 cross-correlation (kernel row-major, kernel[dy+1][dx+1]).
PlaneMapPtr make_correlation3x3(std::size_t h, std::size_t w, const double (&kernel)[3][3]);
// out(v, u) = in(clamp(v + dv), clamp(u + du)).
PlaneMapPtr make_shift(std::size_t h, std::size_t w, int dv, int du);
// Half-pixel-centred bilinear resampling with coordinate clamping.
PlaneMapPtr make_bilinear(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w);
// Non-overlapping k x k mean pooling; dims must divide evenly.
PlaneMapPtr make_avg_pool(std::size_t h, std::size_t w, std::size_t k);

Var apply_map(Var x, const PlaneMapPtr& map);

// NCHW convolution, zero padding. w: [Cout, Cin, k, k], b: [Cout].
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);

struct BatchStats {
  Tensor mean;  // [C]
  Tensor var;   // [C], biased
};

// Per-channel normalisation with statistics of this batch (N, H, W pooled).
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats);
// Per-channel normalisation with fixed running statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps);

}  // namespace duo::ad
