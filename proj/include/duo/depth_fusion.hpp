#pragma once

// Uncertainty-weighted fusion of several depth estimates of one object and
// the Laplace-style regression loss sum_i |z_i - z*| / sigma_i + log sigma_i.

#include <vector>

#include "duo/autodiff.hpp"

namespace duo {

struct HeadSet {
  std::vector<double> z;
  std::vector<double> sigma;

  // Throws ContractViolation unless non-empty, equal sizes, finite, sigma > 0.
  void validate() const;
};

// (sum z_i / sigma_i) / (sum 1 / sigma_i)
double fuse_depth(const HeadSet& hs);
// mean of log sigma_i
double depth_uncertainty_metric(const HeadSet& hs);
double uncertainty_regression_loss(const HeadSet& hs, double z_star);
// The regression loss against the object's own fused depth.
double depth_uncertainty_min_objective(const HeadSet& hs);

namespace ad {

// Rows are objects, columns heads: z and log_sigma are [M, K].
// Returns the fused depth per object, shape [M].
Var fuse_depth(Var z, Var log_sigma);
// sum over all entries of |z - z*| exp(-log_sigma) + log_sigma, z* given per
// object ([M]) and broadcast across heads.
Var uncertainty_regression_loss(Var z, Var log_sigma, Var z_star);
Var depth_uncertainty_min_objective(Var z, Var log_sigma);

}  // namespace ad

}  // namespace duo
