#include "duo/optim.hpp"

#include <cmath>

#include "duo/errors.hpp"

namespace duo {

void sgd_momentum_step(TensorMap& params, TensorMap& velocity, const TensorMap& grads, double lr, double momentum) {
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    DUO_REQUIRE(pit != params.end(), "gradient for unknown parameter " + name);
    Tensor& p = pit->second;
    DUO_REQUIRE(p.shape() == g.shape(), "gradient shape mismatch for " + name);
    auto [vit, fresh] = velocity.try_emplace(name, Tensor(p.shape()));
    Tensor& v = vit->second;
    (void)fresh;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

double global_norm(const TensorMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace duo
