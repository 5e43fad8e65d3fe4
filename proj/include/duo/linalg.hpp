#pragma once

#include <vector>

#include "duo/tensor.hpp"

namespace duo {

inline constexpr double kSingularPivot = 1e-14;

// Gaussian elimination with partial pivoting. Throws SingularMatrixError
// (carrying the offending pivot) when a pivot magnitude drops below 1e-14.
Tensor solve_linear(const Tensor& a, const Tensor& b);

// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
// Requires |a_ij - a_ji| <= 1e-9 and dimension <= 64.
std::vector<double> eigenvalues_sym(const Tensor& a);
double min_eigen_sym(const Tensor& a);

// (a + a^T) / 2
Tensor symmetrize(const Tensor& a);

}  // namespace duo
