#pragma once

// Reference implementations for the property suite and tests, written
// independently of the library code (different algorithms or direct textbook
// formulas).

#include <cmath>
#include <utility>
#include <vector>

#include "duo/rng.hpp"

namespace duo::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// Gauss-Jordan inverse with full pivoting.
inline Mat inverse(Mat a) {
  const std::size_t n = a.size();
  Mat inv(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  std::vector<std::size_t> colperm(n);
  for (std::size_t i = 0; i < n; ++i) colperm[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pr = k, pc = k;
    for (std::size_t r = k; r < n; ++r)
      for (std::size_t c = k; c < n; ++c)
        if (std::abs(a[r][c]) > std::abs(a[pr][pc])) pr = r, pc = c;
    std::swap(a[k], a[pr]);
    std::swap(inv[k], inv[pr]);
    if (pc != k) {
      for (std::size_t r = 0; r < n; ++r) std::swap(a[r][k], a[r][pc]);
      std::swap(colperm[k], colperm[pc]);
    }
    const double d = a[k][k];
    for (std::size_t c = 0; c < n; ++c) a[k][c] /= d, inv[k][c] /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == k) continue;
      const double f = a[r][k];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) a[r][c] -= f * a[k][c], inv[r][c] -= f * inv[k][c];
    }
  }
  // Undo the column permutation: rows of the inverse follow colperm.
  Mat out(n);
  for (std::size_t k = 0; k < n; ++k) out[colperm[k]] = inv[k];
  return out;
}

inline Vec matvec(const Mat& a, const Vec& x) {
  Vec y(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
  return y;
}

inline Vec softmax(const Vec& h) {
  double mx = h[0];
  for (double v : h) mx = std::max(mx, v);
  Vec p(h.size());
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += (p[i] = std::exp(h[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

// -alpha (1 - p_t)^gamma log p_t, straight from the definition.
inline double focal(const Vec& h, std::size_t t, double alpha, double gamma) {
  const Vec p = softmax(h);
  return -alpha * std::pow(1.0 - p[t], gamma) * std::log(p[t]);
}

// Matrix of the approximated pseudo-label assembled entry by entry.
inline Mat cfl_matrix(const Vec& p, double gamma) {
  const std::size_t c = p.size();
  Mat a(c, Vec(c, 0.0));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      a[i][j] = (i == j ? 1.0 - gamma * std::log(p[i]) * p[i] : 0.0) +
                gamma * (1.0 - std::log(p[i])) * p[i] * p[j];
  return a;
}

inline Vec y0_approx(const Vec& p, double gamma) { return matvec(inverse(cfl_matrix(p, gamma)), p); }

inline double cfl(const Vec& p, double alpha, double gamma) {
  const Vec y = y0_approx(p, gamma);
  double l = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) l += std::pow(1.0 - p[i], gamma) * y[i] * std::log(p[i]);
  return -alpha * l;
}

inline double shannon(const Vec& p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  return h;
}

// Random interior simplex point from normalised exponentials.
inline Vec random_simplex(duo::Rng& rng, std::size_t c, double spread = 4.0) {
  Vec h(c);
  for (double& v : h) v = rng.uniform(-spread, spread);
  return softmax(h);
}

}  // namespace duo::oracle
