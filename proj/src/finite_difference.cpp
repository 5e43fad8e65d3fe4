#include "duo/finite_difference.hpp"

#include <cmath>
#include <string>

#include "duo/errors.hpp"

namespace duo {

Tensor finite_difference(const ScalarFn& f, const Tensor& at, double step) {
  DUO_REQUIRE(step > 0.0, "finite_difference: step must be positive");
  Tensor grad = at;
  grad.fill(0.0);
  Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double x0 = at[i];
    probe[i] = x0 + step;
    const double fp = f(probe);
    probe[i] = x0 - step;
    const double fm = f(probe);
    probe[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteError("finite_difference: non-finite value probing coordinate " +
                           std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

bool gradients_close(const Tensor& a, const Tensor& b, double rel, double abs_floor) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double tol = rel * std::max(std::abs(a[i]), std::abs(b[i])) + abs_floor;
    if (!(std::abs(a[i] - b[i]) <= tol)) return false;
  }
  return true;
}

}  // namespace duo
