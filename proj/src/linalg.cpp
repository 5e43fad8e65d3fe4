#include "duo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "duo/errors.hpp"

namespace duo {

Tensor solve_linear(const Tensor& a, const Tensor& b) {
  DUO_REQUIRE(a.rank() == 2 && a.dim(0) == a.dim(1), "solve_linear: A must be square");
  DUO_REQUIRE(b.rank() == 1 && b.dim(0) == a.dim(0), "solve_linear: b does not match A");
  const std::size_t n = a.dim(0);
  std::vector<double> m(a.vec());
  std::vector<double> x(b.vec());
  auto at = [&](std::size_t r, std::size_t c) -> double& { return m[r * n + c]; };

  double min_pivot = INFINITY;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(at(r, k)) > std::abs(at(piv, k))) piv = r;
    const double pmag = std::abs(at(piv, k));
    min_pivot = std::min(min_pivot, pmag);
    if (!(pmag >= kSingularPivot))
      throw SingularMatrixError("solve_linear: pivot " + std::to_string(pmag) + " in column " +
                                    std::to_string(k) + " below threshold",
                                pmag);
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(at(k, c), at(piv, c));
      std::swap(x[k], x[piv]);
    }
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = at(r, k) / at(k, k);
      if (f == 0.0) continue;
      for (std::size_t c = k; c < n; ++c) at(r, c) -= f * at(k, c);
      x[r] -= f * x[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = x[k];
    for (std::size_t c = k + 1; c < n; ++c) s -= at(k, c) * x[c];
    x[k] = s / at(k, k);
  }
  return Tensor::vector(std::move(x));
}

Tensor symmetrize(const Tensor& a) {
  DUO_REQUIRE(a.rank() == 2 && a.dim(0) == a.dim(1), "symmetrize: square matrix required");
  Tensor s(a.shape());
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(0); ++j) s.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
  return s;
}

std::vector<double> eigenvalues_sym(const Tensor& a) {
  DUO_REQUIRE(a.rank() == 2 && a.dim(0) == a.dim(1), "eigenvalues_sym: square matrix required");
  const std::size_t n = a.dim(0);
  DUO_REQUIRE(n >= 1 && n <= 64, "eigenvalues_sym: dimension must be in 1..64");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      DUO_REQUIRE(std::abs(a.at(i, j) - a.at(j, i)) <= 1e-9,
                  "eigenvalues_sym: matrix is not symmetric");

  Tensor m = symmetrize(a);
  double scale = 0.0;
  for (double v : m.values()) scale += v * v;
  const double tol = 1e-30 * std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += m.at(i, j) * m.at(i, j);
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m.at(k, p), mkq = m.at(k, q);
          m.at(k, p) = c * mkp - s * mkq;
          m.at(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m.at(p, k), mqk = m.at(q, k);
          m.at(p, k) = c * mpk - s * mqk;
          m.at(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = m.at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

double min_eigen_sym(const Tensor& a) { return eigenvalues_sym(a).front(); }

}  // namespace duo
