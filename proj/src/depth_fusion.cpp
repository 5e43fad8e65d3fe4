#include "duo/depth_fusion.hpp"

#include <cmath>

#include "duo/errors.hpp"

namespace duo {

void HeadSet::validate() const {
  DUO_REQUIRE(!z.empty(), "head set must contain at least one head");
  DUO_REQUIRE(z.size() == sigma.size(), "head set z/sigma size mismatch");
  for (std::size_t i = 0; i < z.size(); ++i) {
    DUO_REQUIRE(std::isfinite(z[i]), "head depth must be finite");
    DUO_REQUIRE(std::isfinite(sigma[i]) && sigma[i] > 0.0,
                "head uncertainty must be positive, got " + std::to_string(sigma[i]));
  }
}

double fuse_depth(const HeadSet& hs) {
  hs.validate();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < hs.z.size(); ++i) {
    num += hs.z[i] / hs.sigma[i];
    den += 1.0 / hs.sigma[i];
  }
  return num / den;
}

double depth_uncertainty_metric(const HeadSet& hs) {
  hs.validate();
  double s = 0.0;
  for (double v : hs.sigma) s += std::log(v);
  return s / static_cast<double>(hs.sigma.size());
}

double uncertainty_regression_loss(const HeadSet& hs, double z_star) {
  hs.validate();
  DUO_REQUIRE(std::isfinite(z_star), "target depth must be finite");
  double l = 0.0;
  for (std::size_t i = 0; i < hs.z.size(); ++i) l += std::abs(hs.z[i] - z_star) / hs.sigma[i] + std::log(hs.sigma[i]);
  return l;
}

double depth_uncertainty_min_objective(const HeadSet& hs) { return uncertainty_regression_loss(hs, fuse_depth(hs)); }

namespace ad {

namespace {

void require_heads(Var z, Var log_sigma) {
  DUO_REQUIRE(z.shape().size() == 2 && z.shape() == log_sigma.shape(),
              "depth heads must be [objects, heads] with matching z and log sigma");
}

Var row_sums(Var m) {
  return matvec(m, m.tape->constant(Tensor(Shape{m.shape()[1]}, 1.0)));
}

}  // namespace

Var fuse_depth(Var z, Var log_sigma) {
  require_heads(z, log_sigma);
  Var w = exp(neg(log_sigma));
  return div(row_sums(mul(z, w)), row_sums(w));
}

Var uncertainty_regression_loss(Var z, Var log_sigma, Var z_star) {
  require_heads(z, log_sigma);
  const std::size_t m = z.shape()[0], k = z.shape()[1];
  DUO_REQUIRE(z_star.shape() == Shape{m}, "target depth must have one entry per object");
  Var target = matmul(reshape(z_star, {m, 1}), z.tape->constant(Tensor(Shape{1, k}, 1.0)));
  Var resid = mul(abs(sub(z, target)), exp(neg(log_sigma)));
  return sum(add(resid, log_sigma));
}

Var depth_uncertainty_min_objective(Var z, Var log_sigma) {
  return uncertainty_regression_loss(z, log_sigma, stop_gradient(fuse_depth(z, log_sigma)));
}

}  // namespace ad

}  // namespace duo
