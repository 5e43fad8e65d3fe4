#include "duo/detection.hpp"

#include <algorithm>
#include <cmath>

namespace duo {

double Box::diagonal() const { return std::hypot(width(), height()); }

bool Box::covers_pixel(std::size_t u, std::size_t v) const {
  const double cu = static_cast<double>(u) + 0.5, cv = static_cast<double>(v) + 0.5;
  return cu >= u_min && cu < u_max && cv >= v_min && cv < v_max;
}

Box Box::clipped(double w, double h) const {
  Box b{std::clamp(u_min, 0.0, w), std::clamp(v_min, 0.0, h), std::clamp(u_max, 0.0, w), std::clamp(v_max, 0.0, h)};
  // Keep at least one pixel of extent after clipping.
  if (b.u_max - b.u_min < 1.0) {
    b.u_min = std::clamp(b.u_min, 0.0, w - 1.0);
    b.u_max = b.u_min + 1.0;
  }
  if (b.v_max - b.v_min < 1.0) {
    b.v_min = std::clamp(b.v_min, 0.0, h - 1.0);
    b.v_max = b.v_min + 1.0;
  }
  return b;
}

}  // namespace duo
