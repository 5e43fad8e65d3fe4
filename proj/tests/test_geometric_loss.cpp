#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "duo/errors.hpp"
#include "duo/finite_difference.hpp"
#include "duo/geometric_loss.hpp"
#include "duo/rng.hpp"

using namespace duo;

namespace {

template <class F>
Tensor grid(std::size_t h, std::size_t w, F f) {
  Tensor t(Shape{h, w});
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) t.at(v, u) = f(static_cast<double>(u), static_cast<double>(v));
  return t;
}

bool interior(std::size_t v, std::size_t u, std::size_t h, std::size_t w, std::size_t margin) {
  return v >= margin && u >= margin && v + margin < h && u + margin < w;
}

// Second-difference penalty evaluated directly from neighbours (oracle).
double psi_direct(const NormalField& n, std::size_t v, std::size_t u, bool horizontal) {
  const std::size_t h = n.nz.dim(0), w = n.nz.dim(1);
  auto at = [&](const Tensor& c, long vv, long uu) {
    vv = std::clamp<long>(vv, 0, static_cast<long>(h) - 1);
    uu = std::clamp<long>(uu, 0, static_cast<long>(w) - 1);
    return c.at(static_cast<std::size_t>(vv), static_cast<std::size_t>(uu));
  };
  const long dv = horizontal ? 0 : 1, du = horizontal ? 1 : 0;
  double s = 0.0;
  for (const Tensor* c : {&n.nx, &n.ny, &n.nz}) {
    const long vv = static_cast<long>(v), uu = static_cast<long>(u);
    const double d = 2 * at(*c, vv, uu) - at(*c, vv + dv, uu + du) - at(*c, vv - dv, uu - du);
    s += d * d;
  }
  return s;
}

}  // namespace

TEST_CASE("bilinear upsample") {
  Tensor c(Shape{3, 4}, 2.5);
  Tensor up = bilinear_upsample(c, 9, 13);
  for (double v : up.values()) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));

  Tensor row(Shape{1, 2}, std::vector<double>{0, 1});
  Tensor r = bilinear_upsample(row, 1, 4);
  const double expect[] = {0, 0.25, 0.75, 1};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r[i] - expect[i]) < 1e-15);

  Rng rng(1);
  Tensor x(Shape{5, 6});
  for (double& v : x.values()) v = rng.uniform(0.1, 9.0);
  CHECK(bilinear_upsample(x, 5, 6) == x);
  CHECK_THROWS_AS(bilinear_upsample(x, 4, 6), ContractViolation);
}

TEST_CASE("sobel gradients") {
  auto flat = sobel_gradients(Tensor(Shape{5, 5}, 3.0));
  CHECK(max_abs(flat.gx) == 0.0);
  CHECK(max_abs(flat.gy) == 0.0);

  auto ramp = sobel_gradients(grid(6, 7, [](double u, double) { return u; }));
  auto plane = sobel_gradients(grid(6, 7, [](double u, double v) { return 3 * u + 5 * v; }));
  for (std::size_t v = 1; v < 5; ++v)
    for (std::size_t u = 1; u < 6; ++u) {
      CHECK(ramp.gx.at(v, u) == doctest::Approx(1.0));
      CHECK(ramp.gy.at(v, u) == doctest::Approx(0.0));
      CHECK(plane.gx.at(v, u) == doctest::Approx(3.0));
      CHECK(plane.gy.at(v, u) == doctest::Approx(5.0));
    }
  // Replicate padding halves the central difference at the border.
  CHECK(ramp.gx.at(2, 0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(sobel_gradients(Tensor(Shape{2, 5})), ContractViolation);
}

TEST_CASE("normal field") {
  GradientField g{Tensor(Shape{3, 3}), Tensor(Shape{3, 3})};
  g.gx.at(1, 1) = 1.0;
  auto n = normal_field(g);
  CHECK(n.nx.at(0, 0) == 0.0);
  CHECK(n.nz.at(0, 0) == 1.0);
  CHECK(n.nx.at(1, 1) == doctest::Approx(-0.70710678));
  CHECK(n.ny.at(1, 1) == 0.0);
  CHECK(n.nz.at(1, 1) == doctest::Approx(0.70710678));

  Rng rng(2);
  GradientField r{Tensor(Shape{8, 8}), Tensor(Shape{8, 8})};
  for (double& v : r.gx.values()) v = rng.uniform(-50, 50);
  for (double& v : r.gy.values()) v = rng.uniform(-50, 50);
  auto m = normal_field(r);
  for (std::size_t i = 0; i < 64; ++i) {
    const double len = std::sqrt(m.nx[i] * m.nx[i] + m.ny[i] * m.ny[i] + m.nz[i] * m.nz[i]);
    CHECK(std::abs(len - 1.0) <= 1e-6);
    CHECK(m.nz[i] > 0.0);
  }
}

TEST_CASE("smoothness terms") {
  NormalField constant{Tensor(Shape{4, 5}, 0.0), Tensor(Shape{4, 5}, 0.6), Tensor(Shape{4, 5}, 0.8)};
  auto z = smoothness_terms(constant);
  CHECK(max_abs(z.psi_x) == 0.0);
  CHECK(max_abs(z.psi_y) == 0.0);

  // One tilted pixel in an otherwise flat field.
  NormalField bump{Tensor(Shape{3, 5}, 0.0), Tensor(Shape{3, 5}, 0.0), Tensor(Shape{3, 5}, 1.0)};
  const double r = 1.0 / std::sqrt(2.0);
  bump.nx.at(1, 2) = -r;
  bump.nz.at(1, 2) = r;
  auto s = smoothness_terms(bump);
  const double expect = 4.0 * (r * r + (1.0 - r) * (1.0 - r));
  CHECK(s.psi_x.at(1, 2) == doctest::Approx(expect));
  CHECK(s.psi_x.at(1, 1) == doctest::Approx(r * r + (1 - r) * (1 - r)));
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t u = 0; u < 5; ++u) {
      CHECK(s.psi_x.at(v, u) == doctest::Approx(psi_direct(bump, v, u, true)));
      CHECK(s.psi_y.at(v, u) == doctest::Approx(psi_direct(bump, v, u, false)));
    }
}

TEST_CASE("edge weight") {
  Tensor c(Shape{4, 4}, 0.3);
  const Tensor wc = edge_weight(c);
  for (double v : wc.values()) CHECK(v == 1.0);
  Tensor ramp = grid(5, 6, [](double u, double) { return u / 5.0; });
  auto w = edge_weight(ramp);
  CHECK(w.at(2, 2) == doctest::Approx(std::exp(-0.2)));
  Tensor unit = grid(5, 6, [](double u, double) { return u; });
  CHECK(edge_weight(unit).at(2, 3) == doctest::Approx(std::exp(-1.0)));
  Rng rng(3);
  Tensor noise(Shape{9, 9});
  for (double& v : noise.values()) v = rng.uniform();
  const Tensor wn = edge_weight(noise);
  for (double v : wn.values()) CHECK((v > 0.0 && v <= 1.0));
}

TEST_CASE("normal consistency loss") {
  Rng rng(4);
  Tensor image(Shape{10, 12});
  for (double& v : image.values()) v = rng.uniform();
  for (int trial = 0; trial < 50; ++trial) {
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3), c = rng.uniform(5, 20);
    Tensor d = grid(10, 12, [&](double u, double v) { return a * u + b * v + c; });
    Tensor l = normal_consistency_loss(d, image);
    for (std::size_t v = 0; v < 10; ++v)
      for (std::size_t u = 0; u < 12; ++u)
        if (interior(v, u, 10, 12, 2)) CHECK(l.at(v, u) <= 1e-10);
  }
  Tensor bumpy = grid(8, 8, [](double u, double v) { return 10 + std::sin(u) * std::cos(0.7 * v); });
  Tensor flat(Shape{8, 8}, 0.5);
  auto terms = smoothness_terms(normal_field(sobel_gradients(bumpy)));
  Tensor l = normal_consistency_loss(bumpy, flat);
  for (std::size_t i = 0; i < 64; ++i) CHECK(l[i] == doctest::Approx(terms.psi_x[i] + terms.psi_y[i]).epsilon(1e-14));
  CHECK_THROWS_AS(normal_consistency_loss(bumpy, Tensor(Shape{8, 9})), ContractViolation);
}

TEST_CASE("edge weighting suppresses loss at an aligned image edge") {
  // Depth crease along column 5 and an image step edge on the same column.
  Tensor d = grid(9, 10, [](double u, double) { return 10 + std::abs(u - 5.0); });
  Tensor step = grid(9, 10, [](double u, double) { return u < 5 ? 0.1 : 0.9; });
  Tensor flat(Shape{9, 10}, 0.5);
  CHECK(sum(normal_consistency_loss(d, step)) < sum(normal_consistency_loss(d, flat)));
}

TEST_CASE("translation equivariance") {
  Rng rng(5);
  Tensor d(Shape{10, 10}), img(Shape{10, 10});
  for (double& v : d.values()) v = rng.uniform(5, 15);
  for (double& v : img.values()) v = rng.uniform();
  Tensor ds(Shape{10, 10}), is(Shape{10, 10});
  for (std::size_t v = 0; v < 10; ++v)
    for (std::size_t u = 0; u < 10; ++u) {
      const std::size_t su = u == 0 ? 0 : u - 1;
      ds.at(v, u) = d.at(v, su);
      is.at(v, u) = img.at(v, su);
    }
  Tensor a = normal_consistency_loss(d, img), b = normal_consistency_loss(ds, is);
  // Interior pixels far enough from the border that padding does not reach.
  for (std::size_t v = 3; v < 7; ++v)
    for (std::size_t u = 4; u < 8; ++u) CHECK(b.at(v, u) == doctest::Approx(a.at(v, u - 1)).epsilon(1e-12));
}

TEST_CASE("mean NCL gradient matches finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor d0(Shape{8, 8}), img(Shape{8, 8});
    for (double& v : d0.values()) v = rng.uniform(5, 15);
    for (double& v : img.values()) v = rng.uniform();
    const Tensor w = edge_weight(img);
    ad::Tape tape;
    auto d = tape.leaf(d0);
    auto g = tape.backward(ad::mean(ad::normal_consistency_loss(d, w)));
    Tensor fd = finite_difference([&](const Tensor& at) { return sum(normal_consistency_loss(at, img)) / 64.0; }, d0,
                                  1e-6);
    CHECK(gradients_close(g.at(d), fd, 1e-4, 1e-8));
  }
}

TEST_CASE("batched grids and upsampling gradient") {
  Rng rng(7);
  Tensor d0(Shape{2, 4, 6});
  for (double& v : d0.values()) v = rng.uniform(5, 15);
  Tensor w(Shape{2, 8, 12}, 1.0);
  ad::Tape tape;
  auto d = tape.leaf(d0);
  auto g = tape.backward(ad::mean(ad::normal_consistency_loss(ad::bilinear_upsample(d, 8, 12), w)));
  Tensor fd = finite_difference(
      [&](const Tensor& at) {
        ad::Tape t;
        return ad::mean(ad::normal_consistency_loss(ad::bilinear_upsample(t.constant(at), 8, 12), w)).value().item();
      },
      d0, 1e-6);
  CHECK(gradients_close(g.at(d), fd, 1e-4, 1e-8));
}

TEST_CASE("luma") {
  Tensor rgb(Shape{3, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) rgb[i] = 1.0;
  Tensor y = luma(rgb);
  CHECK(y.shape() == Shape{2, 2});
  CHECK(y[0] == doctest::Approx(0.299));
  CHECK_THROWS_AS(luma(Tensor(Shape{2, 2, 2})), ContractViolation);
}
