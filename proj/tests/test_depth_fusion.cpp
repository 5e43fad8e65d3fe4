#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "duo/depth_fusion.hpp"
#include "duo/errors.hpp"
#include "duo/finite_difference.hpp"
#include "duo/rng.hpp"

using namespace duo;

TEST_CASE("fuse_depth examples") {
  CHECK(std::abs(fuse_depth({{10, 20}, {1, 2}}) - 40.0 / 3.0) < 1e-12);
  CHECK(fuse_depth({{3, 6, 9}, {0.7, 0.7, 0.7}}) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(fuse_depth({{12.5}, {0.3}}) == 12.5);
  CHECK_THROWS_AS(fuse_depth({{1, 2}, {1, 0}}), ContractViolation);
  CHECK_THROWS_AS(fuse_depth({{1, 2}, {1}}), ContractViolation);
  CHECK_THROWS_AS(fuse_depth({{}, {}}), ContractViolation);
}

TEST_CASE("depth uncertainty metric") {
  CHECK(depth_uncertainty_metric({{1, 2, 3}, {1, 1, 1}}) == 0.0);
  CHECK(depth_uncertainty_metric({{1, 2}, {std::exp(1.0), std::exp(1.0)}}) == doctest::Approx(1.0));
  CHECK(std::abs(depth_uncertainty_metric({{1, 2}, {1, 4}}) - std::log(4.0) / 2) < 1e-15);
  CHECK_THROWS_AS(depth_uncertainty_metric({{1}, {-1}}), ContractViolation);
}

TEST_CASE("uncertainty regression loss") {
  CHECK(uncertainty_regression_loss({{5, 5}, {2, 3}}, 5.0) == doctest::Approx(std::log(6.0)));
  CHECK(uncertainty_regression_loss({{11}, {1}}, 10.0) == 1.0);
  CHECK(std::abs(depth_uncertainty_min_objective({{10, 20}, {1, 2}}) - (10.0 / 3 + 10.0 / 3 + std::log(2.0))) <
        1e-12);
  CHECK(depth_uncertainty_min_objective({{4, 4, 4}, {1, 2, 3}}) == doctest::Approx(std::log(6.0)));
}

TEST_CASE("fusion invariants") {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(0, 5);
    HeadSet hs;
    for (std::size_t i = 0; i < n; ++i) {
      hs.z.push_back(rng.uniform(1, 50));
      hs.sigma.push_back(rng.uniform(0.05, 5));
    }
    const double f = fuse_depth(hs);
    CHECK(f >= *std::min_element(hs.z.begin(), hs.z.end()) - 1e-12);
    CHECK(f <= *std::max_element(hs.z.begin(), hs.z.end()) + 1e-12);
    HeadSet scaled = hs;
    const double k = rng.uniform(0.1, 10);
    for (double& s : scaled.sigma) s *= k;
    CHECK(fuse_depth(scaled) == doctest::Approx(f).epsilon(1e-12));
  }
}

TEST_CASE("L_dep is stationary in sigma at the residual") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const double z = rng.uniform(1, 30), zs = rng.uniform(1, 30);
    const double r = std::abs(z - zs);
    if (r < 0.1) continue;
    auto loss = [&](double s) { return uncertainty_regression_loss({{z}, {s}}, zs); };
    const double d = (loss(r * (1 + 1e-6)) - loss(r * (1 - 1e-6))) / (2e-6 * r);
    CHECK(std::abs(d) < 1e-6);
    CHECK(loss(r) <= loss(0.9 * r));
    CHECK(loss(r) <= loss(1.1 * r));
  }
}

TEST_CASE("differentiable fusion and loss") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(0, 3), k = 3;
    Tensor z0(Shape{m, k}), ls0(Shape{m, k});
    Tensor zs(Shape{m});
    for (double& v : z0.values()) v = rng.uniform(5, 30);
    for (double& v : ls0.values()) v = rng.uniform(-1, 1.5);
    for (double& v : zs.values()) v = rng.uniform(5, 30);
    // Keep probes away from the |.| kink.
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (std::abs(z0.at(i, j) - zs[i]) < 0.2) z0.at(i, j) += 0.5;

    ad::Tape tape;
    auto z = tape.leaf(z0);
    auto ls = tape.leaf(ls0);
    auto fused = ad::fuse_depth(z, ls);
    for (std::size_t i = 0; i < m; ++i) {
      HeadSet hs;
      for (std::size_t j = 0; j < k; ++j) {
        hs.z.push_back(z0.at(i, j));
        hs.sigma.push_back(std::exp(ls0.at(i, j)));
      }
      CHECK(fused.value()[i] == doctest::Approx(fuse_depth(hs)).epsilon(1e-12));
    }
    auto g = tape.backward(ad::uncertainty_regression_loss(z, ls, tape.constant(zs)));
    auto plain = [&](const Tensor& zz, const Tensor& ll) {
      double total = 0;
      for (std::size_t i = 0; i < m; ++i) {
        HeadSet hs;
        for (std::size_t j = 0; j < k; ++j) {
          hs.z.push_back(zz.at(i, j));
          hs.sigma.push_back(std::exp(ll.at(i, j)));
        }
        total += uncertainty_regression_loss(hs, zs[i]);
      }
      return total;
    };
    CHECK(gradients_close(g.at(z), finite_difference([&](const Tensor& a) { return plain(a, ls0); }, z0, 1e-6), 1e-4,
                          1e-8));
    CHECK(gradients_close(g.at(ls), finite_difference([&](const Tensor& a) { return plain(z0, a); }, ls0, 1e-6), 1e-4,
                          1e-8));
  }
}

TEST_CASE("depth-uncertainty objective holds the pseudo-label constant") {
  Tensor z0 = Tensor::matrix({{10, 20, 14}});
  Tensor ls0 = Tensor::matrix({{0.0, std::log(2.0), 0.3}});
  ad::Tape tape;
  auto z = tape.leaf(z0);
  auto ls = tape.leaf(ls0);
  auto obj = ad::depth_uncertainty_min_objective(z, ls);
  HeadSet hs{{10, 20, 14}, {1.0, 2.0, std::exp(0.3)}};
  CHECK(obj.value().item() == doctest::Approx(depth_uncertainty_min_objective(hs)).epsilon(1e-12));
  auto g = tape.backward(obj);
  const double zs = fuse_depth(hs);
  // With z* frozen, dL/dz_i = sign(z_i - z*) / sigma_i.
  for (std::size_t j = 0; j < 3; ++j) {
    const double expect = (z0[j] > zs ? 1.0 : -1.0) / hs.sigma[j];
    CHECK(g.at(z)[j] == doctest::Approx(expect).epsilon(1e-12));
  }
  // Exactly zero residual takes subgradient 0.
  ad::Tape t2;
  auto zz = t2.leaf(Tensor::matrix({{5.0, 5.0}}));
  auto ll = t2.leaf(Tensor::matrix({{0.0, 0.0}}));
  auto g2 = t2.backward(ad::uncertainty_regression_loss(zz, ll, t2.constant(Tensor::vector({5.0}))));
  CHECK(max_abs(g2.at(zz)) == 0.0);
}
