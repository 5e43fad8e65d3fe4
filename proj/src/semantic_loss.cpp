#include "duo/semantic_loss.hpp"

#include <algorithm>
#include <cmath>

#include "duo/errors.hpp"
#include "duo/linalg.hpp"

namespace duo {

void FocalParams::validate() const {
  DUO_REQUIRE(alpha > 0.0 && std::isfinite(alpha), "focal alpha must be positive");
  DUO_REQUIRE(gamma >= 0.0 && std::isfinite(gamma), "focal gamma must be non-negative");
}

ProbVector ProbVector::from_values(std::vector<double> values) {
  DUO_REQUIRE(!values.empty(), "probability vector must be non-empty");
  double s = 0.0;
  for (double& v : values) {
    DUO_REQUIRE(std::isfinite(v) && v >= 0.0, "probabilities must be finite and non-negative");
    v = std::max(v, kProbFloor);
    s += v;
  }
  for (double& v : values) v /= s;
  return ProbVector(std::move(values));
}

OneHot OneHot::from_vector(std::span<const double> y) {
  OneHot out;
  out.classes = y.size();
  int ones = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1.0) {
      ++ones;
      out.index = i;
    } else {
      DUO_REQUIRE(y[i] == 0.0, "one-hot entries must be 0 or 1");
    }
  }
  DUO_REQUIRE(ones == 1, "one-hot vector must contain exactly one 1");
  return out;
}

std::vector<double> OneHot::dense() const {
  std::vector<double> y(classes, 0.0);
  y.at(index) = 1.0;
  return y;
}

ProbVector softmax(std::span<const double> logits) {
  DUO_REQUIRE(!logits.empty(), "softmax of empty logits");
  double mx = -INFINITY;
  for (double v : logits) {
    DUO_REQUIRE(std::isfinite(v), "logits must be finite");
    mx = std::max(mx, v);
  }
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logits[i] - mx);
  return ProbVector::from_values(std::move(p));
}

double focal_loss(std::span<const double> logits, const OneHot& y, const FocalParams& fp) {
  fp.validate();
  DUO_REQUIRE(y.classes == logits.size() && y.index < y.classes, "focal_loss: label/logit mismatch");
  const ProbVector p = softmax(logits);
  const double pt = p[y.index];
  return -fp.alpha * std::pow(1.0 - pt, fp.gamma) * std::log(pt);
}

LfDecomposition lf_decompose(std::span<const double> logits, const FocalParams& fp) {
  fp.validate();
  const ProbVector p = softmax(logits);
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  LfDecomposition out;
  out.f = fp.alpha * (mx + std::log(s));
  out.g.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.g[i] = fp.alpha * logits[i] +
               fp.alpha * (std::pow(1.0 - p[i], fp.gamma) - 1.0) * std::log(p[i]);
  return out;
}

namespace {

// I + S H, the alpha-free bracket of the Jacobian.
Tensor jacobian_bracket(const ProbVector& p, const FocalParams& fp) {
  fp.validate();
  const std::size_t c = p.size();
  for (std::size_t i = 0; i < c; ++i)
    if (p[i] <= kProbFloor || p[i] >= 1.0)
      throw DegenerateProbabilityError("jacobian_g: probability " + std::to_string(p[i]) +
                                       " at index " + std::to_string(i) + " is on the simplex boundary");
  const double g = fp.gamma;
  Tensor m = Tensor::identity(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double pi = p[i];
    const double s = (std::pow(1.0 - pi, g) - 1.0) / pi -
                     (g == 0.0 ? 0.0 : g * std::pow(1.0 - pi, g - 1.0) * std::log(pi));
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (i == j ? pi : 0.0) - pi * p[j];
      m.at(i, j) += s * h;
    }
  }
  return m;
}

}  // namespace

Tensor jacobian_g(const ProbVector& p, const FocalParams& fp) {
  Tensor m = jacobian_bracket(p, fp);
  m *= fp.alpha;
  return m;
}

std::vector<double> y0_exact(const ProbVector& p, const FocalParams& fp) {
  return solve_linear(jacobian_bracket(p, fp), p.tensor()).vec();
}

Tensor pseudo_label_matrix(const ProbVector& p, const FocalParams& fp, CouplingMode mode) {
  fp.validate();
  const std::size_t c = p.size();
  const double g = fp.gamma;
  double ptp = 0.0;
  for (std::size_t i = 0; i < c; ++i) ptp += p[i] * p[i];
  Tensor a = Tensor::identity(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double lp = std::log(p[i]);
    if (mode == CouplingMode::outer_product) {
      for (std::size_t j = 0; j < c; ++j) a.at(i, j) += g * (1.0 - lp) * p[i] * p[j];
    } else {
      a.at(i, i) += g * (1.0 - lp) * ptp;
    }
    a.at(i, i) -= g * lp * p[i];
  }
  return a;
}

std::vector<double> y0_approx(const ProbVector& p, const FocalParams& fp, CouplingMode mode) {
  return solve_linear(pseudo_label_matrix(p, fp, mode), p.tensor()).vec();
}

double conjugate_focal_loss(const ProbVector& p, const FocalParams& fp, CouplingMode mode) {
  const std::vector<double> y0 = y0_approx(p, fp, mode);
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    loss += std::pow(1.0 - p[i], fp.gamma) * y0[i] * std::log(p[i]);
  return -fp.alpha * loss;
}

double semantic_uncertainty(const ProbVector& p, const FocalParams& fp) {
  return conjugate_focal_loss(p, fp);
}

double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.values()) h -= v * std::log(v);
  return h;
}

namespace ad {

Var prob_vector(Var logits) {
  Var p = clamp_min(softmax(logits), kProbFloor);
  return scale_by(p, pow(sum(p), -1.0));
}

Var focal_loss(Var logits, std::size_t target, const FocalParams& fp) {
  fp.validate();
  DUO_REQUIRE(target < logits.size(), "focal_loss: target out of range");
  Var lp = log_softmax(logits);
  Var lpt = gather(lp, {target});
  Var weight = pow(add(neg(exp(lpt)), 1.0), fp.gamma);
  return scale(sum(mul(weight, lpt)), -fp.alpha);
}

Var conjugate_focal_loss(Var p, const FocalParams& fp, CflGradient grad, CouplingMode mode) {
  fp.validate();
  Tape& t = *p.tape;
  const std::size_t c = p.size();
  Var logp = log(p);
  Var pm = grad == CflGradient::full ? p : stop_gradient(p);
  Var logpm = grad == CflGradient::full ? logp : stop_gradient(logp);

  Var coupling;
  if (mode == CouplingMode::outer_product) {
    coupling = scale_rows(outer(pm, pm), add(neg(logpm), 1.0));
  } else {
    coupling = diag(scale_by(add(neg(logpm), 1.0), dot(pm, pm)));
  }
  Var a = add(t.constant(Tensor::identity(c)),
              sub(scale(coupling, fp.gamma), scale(diag(mul(logpm, pm)), fp.gamma)));
  Var y0 = solve(a, p);
  Var weight = pow(add(neg(pm), 1.0), fp.gamma);
  return scale(sum(mul(mul(weight, y0), logp)), -fp.alpha);
}

Var entropy(Var p) { return neg(sum(mul(p, log(p)))); }

}  // namespace ad

}  // namespace duo
