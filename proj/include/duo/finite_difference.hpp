#pragma once

#include <functional>

#include "duo/tensor.hpp"

namespace duo {

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x + s e_i) - f(x - s e_i)) / 2s for every coordinate.
// Throws NonFiniteError naming the coordinate if a probe evaluates to NaN/inf.
Tensor finite_difference(const ScalarFn& f, const Tensor& at, double step);

// |a - b| <= rel * max(|a|, |b|) + abs_floor, elementwise.
bool gradients_close(const Tensor& a, const Tensor& b, double rel, double abs_floor);

}  // namespace duo
