#pragma once

#include <map>
#include <string>

#include "duo/tensor.hpp"

namespace duo {

using TensorMap = std::map<std::string, Tensor>;

// v <- momentum * v + g, theta <- theta - lr * v for every parameter that has
// a gradient. Velocity buffers are created on first use.
void sgd_momentum_step(TensorMap& params, TensorMap& velocity, const TensorMap& grads, double lr, double momentum);

// Global L2 norm over all gradient tensors.
double global_norm(const TensorMap& grads);

}  // namespace duo
