#pragma once

// Focal loss, its Legendre-Fenchel split f(h) - y^T g(h), the Jacobian of g,
// the conjugate pseudo-label y0 (exact and approximated) and the label-free
// Conjugate Focal Loss built from it.

#include <cstddef>
#include <span>
#include <vector>

#include "duo/autodiff.hpp"
#include "duo/tensor.hpp"

namespace duo {

inline constexpr double kProbFloor = 1e-12;

struct FocalParams {
  double alpha = 4.0;
  double gamma = 2.0;

  void validate() const;
};

// A point on the probability simplex with every entry >= kProbFloor.
class ProbVector {
 public:
  // Clamps to kProbFloor and renormalises; requires a non-empty finite input
  // with positive sum.
  static ProbVector from_values(std::vector<double> values);

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const noexcept { return p_; }
  Tensor tensor() const { return Tensor::vector(p_); }

 private:
  explicit ProbVector(std::vector<double> p) : p_(std::move(p)) {}
  std::vector<double> p_;
};

struct OneHot {
  std::size_t index = 0;
  std::size_t classes = 0;

  // Validates entries in {0, 1} with exactly one 1.
  static OneHot from_vector(std::span<const double> y);
  std::vector<double> dense() const;
};

// How the matrix of the approximated pseudo-label couples p with itself.
enum class CouplingMode {
  outer_product,  // (1 - log p_i) p_i p_j, the default
  inner_product,  // (1 - log p_i) (p^T p) on the diagonal only
};

// Which parts of L_CFL receive gradient in the differentiable form.
enum class CflGradient {
  pseudo_label,  // matrix and focal weight held constant; p and log p carry gradient
  full,          // differentiate through everything, including the solve
};

ProbVector softmax(std::span<const double> logits);

double focal_loss(std::span<const double> logits, const OneHot& y, const FocalParams& fp);

struct LfDecomposition {
  double f = 0.0;
  std::vector<double> g;
};
LfDecomposition lf_decompose(std::span<const double> logits, const FocalParams& fp);

// alpha * [I + S H] with S = diag(((1-p)^g - 1)/p - g (1-p)^(g-1) log p),
// H = diag(p) - p p^T. Throws DegenerateProbabilityError if any p_i <= floor.
Tensor jacobian_g(const ProbVector& p, const FocalParams& fp);

// [I + S H]^{-1} p
std::vector<double> y0_exact(const ProbVector& p, const FocalParams& fp);

// I + g (1 - log p) o p p^T - g log p o diag(p), row i scaled by log p_i terms.
Tensor pseudo_label_matrix(const ProbVector& p, const FocalParams& fp,
                           CouplingMode mode = CouplingMode::outer_product);
std::vector<double> y0_approx(const ProbVector& p, const FocalParams& fp,
                              CouplingMode mode = CouplingMode::outer_product);

// -alpha sum_i (1 - p_i)^g (y0_approx)_i log p_i
double conjugate_focal_loss(const ProbVector& p, const FocalParams& fp,
                            CouplingMode mode = CouplingMode::outer_product);

// Per-object semantic uncertainty: the L_CFL value of its probability vector.
double semantic_uncertainty(const ProbVector& p, const FocalParams& fp);

double entropy(const ProbVector& p);

namespace ad {

// softmax(h) clamped to kProbFloor and renormalised.
Var prob_vector(Var logits);
Var focal_loss(Var logits, std::size_t target, const FocalParams& fp);
Var conjugate_focal_loss(Var p, const FocalParams& fp, CflGradient grad = CflGradient::pseudo_label,
                         CouplingMode mode = CouplingMode::outer_product);
Var entropy(Var p);

}  // namespace ad

}  // namespace duo
