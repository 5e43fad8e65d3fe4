#include "duo/geometric_loss.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <utility>

#include "duo/errors.hpp"
#include "duo/nn_ops.hpp"

namespace duo {

namespace {

struct Stencils {
  ad::PlaneMapPtr sobel_x, sobel_y;
  ad::PlaneMapPtr left, right, up, down;
};

const Stencils& stencils(std::size_t h, std::size_t w) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, Stencils> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find({h, w});
  if (it != cache.end()) return it->second;
  const double s = kSobelScale;
  const double kx[3][3] = {{-s, 0, s}, {-2 * s, 0, 2 * s}, {-s, 0, s}};
  const double ky[3][3] = {{-s, -2 * s, -s}, {0, 0, 0}, {s, 2 * s, s}};
  Stencils st{ad::make_correlation3x3(h, w, kx), ad::make_correlation3x3(h, w, ky),
              ad::make_shift(h, w, 0, -1),        ad::make_shift(h, w, 0, 1),
              ad::make_shift(h, w, -1, 0),        ad::make_shift(h, w, 1, 0)};
  return cache.emplace(std::make_pair(h, w), std::move(st)).first->second;
}

void require_grid(const Shape& s, const char* what) {
  DUO_REQUIRE(s.size() >= 2, std::string(what) + ": expected a grid with at least two axes");
  DUO_REQUIRE(s[s.size() - 2] >= 3 && s[s.size() - 1] >= 3,
              std::string(what) + ": grid must be at least 3x3, got " + shape_string(s));
}

std::size_t rows(const Shape& s) { return s[s.size() - 2]; }
std::size_t cols(const Shape& s) { return s[s.size() - 1]; }

}  // namespace

namespace ad {

Var bilinear_upsample(Var depth, std::size_t out_h, std::size_t out_w) {
  const Shape& s = depth.shape();
  DUO_REQUIRE(s.size() >= 2, "bilinear_upsample: expected a grid");
  DUO_REQUIRE(out_h >= rows(s) && out_w >= cols(s), "bilinear_upsample: target smaller than source");
  if (out_h == rows(s) && out_w == cols(s)) return depth;
  return apply_map(depth, make_bilinear(rows(s), cols(s), out_h, out_w));
}

GradientVars sobel_gradients(Var depth) {
  require_grid(depth.shape(), "sobel_gradients");
  const Stencils& st = stencils(rows(depth.shape()), cols(depth.shape()));
  return {apply_map(depth, st.sobel_x), apply_map(depth, st.sobel_y)};
}

NormalVars normal_field(const GradientVars& g) {
  Var inv = pow(add(add(square(g.gx), square(g.gy)), 1.0), -0.5);
  return {neg(mul(g.gx, inv)), neg(mul(g.gy, inv)), inv};
}

Var smoothness(const NormalVars& n) {
  const Shape& s = n.nz.shape();
  require_grid(s, "smoothness_terms");
  const Stencils& st = stencils(rows(s), cols(s));
  Var total;
  bool first = true;
  for (Var c : {n.nx, n.ny, n.nz}) {
    Var dx = sub(scale(c, 2.0), add(apply_map(c, st.right), apply_map(c, st.left)));
    Var dy = sub(scale(c, 2.0), add(apply_map(c, st.down), apply_map(c, st.up)));
    Var term = add(square(dx), square(dy));
    total = first ? term : add(total, term);
    first = false;
  }
  return total;
}

Var normal_consistency_loss(Var depth, const Tensor& weight) {
  DUO_REQUIRE(depth.shape() == weight.shape(), "normal_consistency_loss: depth " + shape_string(depth.shape()) +
                                                   " vs weight " + shape_string(weight.shape()));
  Var psi = smoothness(normal_field(sobel_gradients(depth)));
  return mul(psi, depth.tape->constant(weight));
}

}  // namespace ad

Tensor bilinear_upsample(const Tensor& depth, std::size_t out_h, std::size_t out_w) {
  ad::Tape t;
  return ad::bilinear_upsample(t.constant(depth), out_h, out_w).value();
}

GradientField sobel_gradients(const Tensor& depth) {
  ad::Tape t;
  auto g = ad::sobel_gradients(t.constant(depth));
  return {g.gx.value(), g.gy.value()};
}

NormalField normal_field(const GradientField& g) {
  DUO_REQUIRE(g.gx.shape() == g.gy.shape(), "normal_field: gx/gy shape mismatch");
  ad::Tape t;
  auto n = ad::normal_field({t.constant(g.gx), t.constant(g.gy)});
  return {n.nx.value(), n.ny.value(), n.nz.value()};
}

SmoothnessTerms smoothness_terms(const NormalField& n) {
  DUO_REQUIRE(n.nx.shape() == n.nz.shape() && n.ny.shape() == n.nz.shape(), "smoothness_terms: shape mismatch");
  const Shape& s = n.nz.shape();
  require_grid(s, "smoothness_terms");
  const Stencils& st = stencils(rows(s), cols(s));
  SmoothnessTerms out{Tensor(s), Tensor(s)};
  for (const Tensor* c : {&n.nx, &n.ny, &n.nz}) {
    const Tensor l = st.left->apply(*c), r = st.right->apply(*c);
    const Tensor u = st.up->apply(*c), d = st.down->apply(*c);
    for (std::size_t i = 0; i < c->size(); ++i) {
      const double dx = 2.0 * (*c)[i] - r[i] - l[i];
      const double dy = 2.0 * (*c)[i] - d[i] - u[i];
      out.psi_x[i] += dx * dx;
      out.psi_y[i] += dy * dy;
    }
  }
  return out;
}

Tensor edge_weight(const Tensor& intensity) {
  const GradientField g = sobel_gradients(intensity);
  Tensor w(intensity.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-std::sqrt(g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i]));
  return w;
}

Tensor normal_consistency_loss(const Tensor& depth, const Tensor& intensity) {
  DUO_REQUIRE(depth.shape() == intensity.shape(), "normal_consistency_loss: depth " + shape_string(depth.shape()) +
                                                      " vs image " + shape_string(intensity.shape()));
  ad::Tape t;
  return ad::normal_consistency_loss(t.constant(depth), edge_weight(intensity)).value();
}

Tensor luma(const Tensor& rgb) {
  const Shape& s = rgb.shape();
  DUO_REQUIRE((s.size() == 3 && s[0] == 3) || (s.size() == 4 && s[1] == 3), "luma: expected [3,H,W] or [N,3,H,W]");
  const std::size_t n = s.size() == 4 ? s[0] : 1;
  const std::size_t plane = rows(s) * cols(s);
  Shape out_shape = s.size() == 4 ? Shape{n, rows(s), cols(s)} : Shape{rows(s), cols(s)};
  Tensor out(out_shape);
  for (std::size_t b = 0; b < n; ++b) {
    const double* src = rgb.data() + b * 3 * plane;
    double* dst = out.data() + b * plane;
    for (std::size_t i = 0; i < plane; ++i)
      dst[i] = 0.299 * src[i] + 0.587 * src[plane + i] + 0.114 * src[2 * plane + i];
  }
  return out;
}

}  // namespace duo
