#include "duo/harness/properties.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "duo/depth_fusion.hpp"
#include "duo/finite_difference.hpp"
#include "duo/geometric_loss.hpp"
#include "duo/harness/oracles.hpp"
#include "duo/linalg.hpp"
#include "duo/rng.hpp"
#include "duo/semantic_loss.hpp"

namespace duo::harness {

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t c, double lo, double hi) {
  std::vector<double> h(c);
  for (double& v : h) v = rng.uniform(lo, hi);
  return h;
}

std::size_t random_classes(Rng& rng) { return 2 + static_cast<std::size_t>(rng.uniform_int(0, 8)); }

std::vector<double> as_vec(const ProbVector& p) { return {p.values().begin(), p.values().end()}; }

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

Tensor random_grid(Rng& rng, std::size_t h, std::size_t w, double lo, double hi) {
  Tensor t(Shape{h, w});
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

CheckResult check_lf_identity() {
  CheckResult r;
  r.id = 1;
  r.name = "lf_identity";
  r.budget_seconds = 1.0;
  Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = random_classes(rng);
    const double gamma = trial % 4;
    const double alpha = rng.uniform(0.5, 5.0);
    const auto h = random_logits(rng, c, -6.0, 6.0);
    const std::size_t t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(c) - 1));
    const auto lf = lf_decompose(h, {alpha, gamma});
    const double ref = oracle::focal(h, t, alpha, gamma);
    worst = std::max(worst, std::abs(lf.f - lf.g[t] - ref));
  }
  r.pass = worst <= 1e-10;
  r.detail = fmt("max |f - y.g - L_FL| = %.3g over 1000 draws, c in 2..10, gamma 0..3", worst);
  return r;
}

CheckResult check_psd() {
  CheckResult r;
  r.id = 2;
  r.name = "psd_jacobian";
  r.budget_seconds = 10.0;
  Rng rng(1002);
  double worst = 1e300;
  const double alpha = 4.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = random_classes(rng);
    const auto p = ProbVector::from_values(oracle::random_simplex(rng, c));
    Tensor j = jacobian_g(p, {alpha, 2.0});
    j *= 1.0 / alpha;
    worst = std::min(worst, min_eigen_sym(symmetrize(j)));
  }
  r.pass = worst >= -1e-8;
  r.detail = fmt("min eigenvalue of sym(grad g)/alpha = %.6g over 10000 points, gamma 2", worst);
  return r;
}

CheckResult check_conjugate_reductions() {
  CheckResult r;
  r.id = 3;
  r.name = "conjugate_reductions";
  r.budget_seconds = 1.0;
  Rng rng(1003);
  double worst_entropy = 0.0, worst_uniform = 0.0, worst_approx = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = ProbVector::from_values(oracle::random_simplex(rng, random_classes(rng)));
    const double alpha = rng.uniform(0.5, 5.0);
    worst_entropy = std::max(worst_entropy, std::abs(conjugate_focal_loss(p, {alpha, 0.0}) -
                                                     alpha * oracle::shannon(as_vec(p))));
  }
  for (std::size_t c = 2; c <= 10; ++c)
    for (double gamma : {0.0, 1.0, 2.0, 3.0}) {
      const auto u = ProbVector::from_values(std::vector<double>(c, 1.0 / static_cast<double>(c)));
      const auto y = y0_exact(u, {4.0, gamma});
      for (std::size_t i = 0; i < c; ++i) worst_uniform = std::max(worst_uniform, std::abs(y[i] - u[i]));
    }
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = ProbVector::from_values(oracle::random_simplex(rng, random_classes(rng)));
    const auto got = y0_approx(p, {4.0, 2.0});
    const auto expect = oracle::y0_approx(as_vec(p), 2.0);
    for (std::size_t i = 0; i < got.size(); ++i) worst_approx = std::max(worst_approx, std::abs(got[i] - expect[i]));
  }
  r.pass = worst_entropy <= 1e-10 && worst_uniform <= 1e-12 && worst_approx <= 1e-10;
  r.detail = fmt("gamma0 vs alpha*H %.3g, y0_exact(uniform) %.3g, y0_approx vs inverse oracle %.3g", worst_entropy,
                 worst_uniform, worst_approx);
  return r;
}

CheckResult check_gradients() {
  CheckResult r;
  r.id = 4;
  r.name = "gradient_checks";
  r.budget_seconds = 30.0;
  Rng rng(1004);
  int cfl_fail = 0, ncl_fail = 0;
  const int points = 200;
  for (int trial = 0; trial < points; ++trial) {
    const std::size_t c = random_classes(rng);
    const Tensor h0 = Tensor::vector(random_logits(rng, c, -3.0, 3.0));
    ad::Tape tape;
    auto h = tape.leaf(h0);
    auto g = tape.backward(ad::conjugate_focal_loss(ad::prob_vector(h), {4.0, 2.0}, CflGradient::full));
    const Tensor fd = finite_difference(
        [](const Tensor& at) { return oracle::cfl(oracle::softmax(at.vec()), 4.0, 2.0); }, h0, 1e-6);
    if (!gradients_close(g.at(h), fd, 1e-4, 1e-8)) ++cfl_fail;
  }
  // Mean NCL through an upsampled cell-level depth map.
  for (int trial = 0; trial < points; ++trial) {
    const Tensor cells = random_grid(rng, 4, 6, 5.0, 25.0);
    const Tensor image = random_grid(rng, 8, 12, 0.0, 1.0);
    const Tensor w = edge_weight(image);
    ad::Tape tape;
    auto d = tape.leaf(cells);
    auto g = tape.backward(ad::mean(ad::normal_consistency_loss(ad::bilinear_upsample(d, 8, 12), w)));
    const Tensor fd = finite_difference(
        [&](const Tensor& at) { return sum(normal_consistency_loss(bilinear_upsample(at, 8, 12), image)) / 96.0; },
        cells, 1e-6);
    if (!gradients_close(g.at(d), fd, 1e-4, 1e-8)) ++ncl_fail;
  }
  r.pass = cfl_fail == 0 && ncl_fail == 0;
  r.detail = fmt("mismatches: CFL %.0f/%.0f, mean NCL %.0f/200 (rel 1e-4)", cfl_fail, points, ncl_fail);
  return r;
}

CheckResult check_geometric_nulls() {
  CheckResult r;
  r.id = 5;
  r.name = "geometric_nulls";
  r.budget_seconds = 5.0;
  Rng rng(1005);
  double worst_plane = 0.0, worst_norm = 0.0, min_w = 1e300, max_w = -1e300;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 6 + static_cast<std::size_t>(rng.uniform_int(0, 10));
    const std::size_t w = 6 + static_cast<std::size_t>(rng.uniform_int(0, 10));
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3), c = rng.uniform(5, 40);
    Tensor plane(Shape{h, w});
    for (std::size_t v = 0; v < h; ++v)
      for (std::size_t u = 0; u < w; ++u) plane.at(v, u) = a * static_cast<double>(u) + b * static_cast<double>(v) + c;
    const Tensor image = random_grid(rng, h, w, 0.0, 1.0);
    const Tensor loss = normal_consistency_loss(plane, image);
    // Two pixels of margin keep the replicate padding out of the stencil.
    for (std::size_t v = 2; v + 2 < h; ++v)
      for (std::size_t u = 2; u + 2 < w; ++u) worst_plane = std::max(worst_plane, std::abs(loss.at(v, u)));

    const Tensor depth = random_grid(rng, h, w, 1.0, 60.0);
    const NormalField n = normal_field(sobel_gradients(depth));
    for (std::size_t i = 0; i < depth.size(); ++i) {
      const double len = std::sqrt(n.nx[i] * n.nx[i] + n.ny[i] * n.ny[i] + n.nz[i] * n.nz[i]);
      worst_norm = std::max(worst_norm, std::abs(len - 1.0));
    }
    const Tensor ew = edge_weight(image);
    for (double v : ew.values()) min_w = std::min(min_w, v), max_w = std::max(max_w, v);
  }
  r.pass = worst_plane <= 1e-10 && worst_norm <= 1e-6 && min_w > 0.0 && max_w <= 1.0;
  r.detail = fmt("planar interior NCL %.3g, | |n| - 1 | %.3g, edge weight in [%.4f, ", worst_plane, worst_norm, min_w) +
             fmt("%.4f]", max_w);
  return r;
}

CheckResult check_fusion_oracles() {
  CheckResult r;
  r.id = 6;
  r.name = "fusion_oracles";
  r.budget_seconds = 1.0;
  Rng rng(1006);
  const double hand = std::abs(fuse_depth({{10, 20}, {1, 2}}) - 40.0 / 3.0);
  double worst_mean = 0.0, worst_stationary = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform_int(0, 5));
    const double s = rng.uniform(0.05, 5.0);
    HeadSet hs;
    double mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      hs.z.push_back(rng.uniform(1, 60));
      hs.sigma.push_back(s);
      mean += hs.z.back();
    }
    mean /= static_cast<double>(k);
    worst_mean = std::max(worst_mean, std::abs(fuse_depth(hs) - mean) / mean);
  }
  // d/dsigma (|r|/sigma + log sigma) = (sigma - |r|) / sigma^2 vanishes at
  // sigma = |r|; read the derivative off the differentiable loss in log sigma.
  for (int trial = 0; trial < 500; ++trial) {
    const double z = rng.uniform(1, 60), zs = rng.uniform(1, 60);
    const double res = std::abs(z - zs);
    if (res < 1e-3) continue;
    ad::Tape tape;
    auto ls = tape.leaf(Tensor(Shape{1, 1}, std::log(res)));
    auto g = tape.backward(
        ad::uncertainty_regression_loss(tape.constant(Tensor(Shape{1, 1}, z)), ls, tape.constant(Tensor::vector({zs}))));
    worst_stationary = std::max(worst_stationary, std::abs(g.at(ls)[0]));
    const double lo = uncertainty_regression_loss({{z}, {res * 0.999}}, zs);
    const double at = uncertainty_regression_loss({{z}, {res}}, zs);
    const double hi = uncertainty_regression_loss({{z}, {res * 1.001}}, zs);
    if (!(at <= lo && at <= hi)) worst_stationary = std::max(worst_stationary, 1.0);
  }
  r.pass = hand <= 1e-9 && worst_mean <= 1e-9 && worst_stationary <= 1e-9;
  r.detail = fmt("hand case %.3g, equal-sigma mean %.3g, dL/dlog(sigma) at |r| %.3g", hand, worst_mean,
                 worst_stationary);
  return r;
}

CheckResult timed(const std::function<CheckResult()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r = fn();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.budget_seconds > 0 && r.seconds > r.budget_seconds) {
    r.pass = false;
    r.detail += fmt(" [over budget %.0fs]", r.budget_seconds);
  }
  return r;
}

std::vector<CheckResult> run_property_suite() {
  return {timed(check_lf_identity),     timed(check_psd),             timed(check_conjugate_reductions),
          timed(check_gradients),       timed(check_geometric_nulls), timed(check_fusion_oracles)};
}

std::string format_result(const CheckResult& r) {
  std::ostringstream os;
  char head[96];
  std::snprintf(head, sizeof head, "[%s] %2d %-24s %8.2fs  ", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(),
                r.seconds);
  os << head << r.detail;
  return os.str();
}

}  // namespace duo::harness
