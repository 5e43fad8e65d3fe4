#include <cmath>
#include <sstream>

#include "doctest.h"
#include "duo/autodiff.hpp"
#include "duo/errors.hpp"
#include "duo/finite_difference.hpp"
#include "duo/linalg.hpp"
#include "duo/nn_ops.hpp"
#include "duo/rng.hpp"
#include "duo/tensor_io.hpp"

using namespace duo;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Random rotation via Gram-Schmidt on a random matrix.
Tensor random_orthogonal(Rng& rng, std::size_t n) {
  Tensor q = random_tensor(rng, {n, n}, -1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < n; ++j) d += q.at(i, j) * q.at(k, j);
      for (std::size_t j = 0; j < n; ++j) q.at(i, j) -= d * q.at(k, j);
    }
    double nrm = 0.0;
    for (std::size_t j = 0; j < n; ++j) nrm += q.at(i, j) * q.at(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t j = 0; j < n; ++j) q.at(i, j) /= nrm;
  }
  return q;
}

}  // namespace

TEST_CASE("backward of sum of squares") {
  ad::Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2, 3}));
  auto g = tape.backward(ad::sum(ad::mul(x, x)));
  REQUIRE(g.contains(x));
  CHECK(g.at(x) == Tensor::vector({2, 4, 6}));
}

TEST_CASE("constant root yields empty gradient map") {
  ad::Tape tape;
  auto c = tape.constant(5.0);
  CHECK(tape.backward(c).empty());
}

TEST_CASE("non-scalar root is rejected") {
  ad::Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(ad::exp(x)), ContractViolation);
}

TEST_CASE("non-finite gradients are flagged") {
  ad::Tape tape;
  auto x = tape.leaf(Tensor::vector({0.0, 1.0}));
  auto g = tape.backward(ad::sum(ad::sqrt(x)));
  CHECK(g.diagnostics().non_finite);
  CHECK(g.diagnostics().first_bad_node != ad::Diagnostics::kNone);
}

TEST_CASE("stop_gradient blocks flow") {
  ad::Tape tape;
  auto x = tape.leaf(Tensor::vector({2.0}));
  auto y = ad::mul(ad::stop_gradient(x), x);
  auto g = tape.backward(ad::sum(y));
  CHECK(g.at(x)[0] == doctest::Approx(2.0));
}

TEST_CASE("finite_difference basics") {
  ScalarFn sq = [](const Tensor& t) {
    double s = 0;
    for (double v : t.values()) s += v * v;
    return s;
  };
  Tensor g = finite_difference(sq, Tensor::vector({1, 2}), 1e-6);
  CHECK(std::abs(g[0] - 2.0) < 1e-8);
  CHECK(std::abs(g[1] - 4.0) < 1e-8);
  Tensor z = finite_difference([](const Tensor&) { return 3.0; }, Tensor::vector({1, 2, 3}), 1e-6);
  CHECK(max_abs(z) == 0.0);
  CHECK_THROWS_AS(finite_difference(sq, Tensor::vector({1}), 0.0), ContractViolation);
  ScalarFn bad = [](const Tensor& t) { return t[1] > 0.5 ? std::log(-1.0) : 0.0; };
  try {
    finite_difference(bad, Tensor::vector({0.0, 0.5}), 1e-3);
    FAIL("expected throw");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("random graphs agree with finite differences") {
  Rng rng(7);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(0, 3);
    Tensor x0 = random_tensor(rng, {n}, 0.5, 2.0);
    Tensor m0 = random_tensor(rng, {n, n}, -0.3, 0.3);
    for (std::size_t i = 0; i < n; ++i) m0.at(i, i) += 2.0;
    const int variant = trial % 4;
    auto build = [&](ad::Tape& t, ad::Var x) {
      auto m = t.constant(m0);
      switch (variant) {
        case 0: return ad::sum(ad::mul(ad::exp(ad::scale(x, 0.5)), ad::log(x)));
        case 1: return ad::dot(ad::solve(m, x), ad::add(x, 1.0));
        case 2: return ad::mean(ad::div(ad::matvec(m, x), ad::add(ad::square(x), 1.0)));
        default: return ad::sum(ad::log(ad::softmax(ad::mul(x, x))));
      }
    };
    ad::Tape tape;
    auto x = tape.leaf(x0);
    auto g = tape.backward(build(tape, x));
    ScalarFn f = [&](const Tensor& at) {
      ad::Tape t2;
      return build(t2, t2.constant(at)).value().item();
    };
    Tensor fd = finite_difference(f, x0, 1e-6);
    if (!gradients_close(g.at(x), fd, 1e-4, 1e-8)) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("solve gradient with respect to the matrix") {
  Rng rng(11);
  Tensor a0 = random_tensor(rng, {3, 3}, -0.5, 0.5);
  for (std::size_t i = 0; i < 3; ++i) a0.at(i, i) += 2.0;
  const Tensor b0 = Tensor::vector({0.3, -0.2, 0.9});
  auto build = [&](ad::Tape& t, ad::Var a) { return ad::sum(ad::square(ad::solve(a, t.constant(b0)))); };
  ad::Tape tape;
  auto a = tape.leaf(a0);
  auto g = tape.backward(build(tape, a));
  Tensor fd = finite_difference(
      [&](const Tensor& at) {
        ad::Tape t2;
        return build(t2, t2.constant(at)).value().item();
      },
      a0, 1e-6);
  CHECK(gradients_close(g.at(a), fd, 1e-4, 1e-8));
}

TEST_CASE("solve_linear examples") {
  CHECK(solve_linear(Tensor::identity(3), Tensor::vector({1, 2, 3})) == Tensor::vector({1, 2, 3}));
  Tensor x = solve_linear(Tensor::matrix({{2, 0}, {0, 4}}), Tensor::vector({2, 8}));
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(2.0));
  Tensor y = solve_linear(Tensor::matrix({{2.5397, 0.8466}, {0.8466, 2.5397}}), Tensor::vector({0.5, 0.5}));
  CHECK(std::abs(y[0] - 0.5 / 3.3863) < 1e-12);
  CHECK(std::abs(y[1] - 0.14765) < 1e-5);
}

TEST_CASE("solve_linear rejects singular and mismatched systems") {
  try {
    solve_linear(Tensor::matrix({{1, 2}, {2, 4}}), Tensor::vector({1, 1}));
    FAIL("expected throw");
  } catch (const SingularMatrixError& e) {
    CHECK(e.min_pivot() < 1e-14);
  }
  CHECK_THROWS_AS(solve_linear(Tensor::identity(2), Tensor::vector({1, 2, 3})), ContractViolation);
}

TEST_CASE("solve_linear residual on random well-conditioned systems") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(0, 8);
    Tensor a = random_tensor(rng, {n, n}, -1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) a.at(i, i) += static_cast<double>(n);
    Tensor b = random_tensor(rng, {n}, -10.0, 10.0);
    Tensor x = solve_linear(a, b);
    Tensor r = matvec(a, x);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) res = std::max(res, std::abs(r[i] - b[i]));
    CHECK(res <= 1e-10 * (1.0 + max_abs(b)));
  }
}

TEST_CASE("min_eigen_sym examples") {
  CHECK(std::abs(min_eigen_sym(Tensor::identity(2)) - 1.0) < 1e-12);
  CHECK(std::abs(min_eigen_sym(Tensor::matrix({{0.7983, 0.2017}, {0.2017, 0.7983}})) - 0.5966) < 1e-9);
  CHECK(std::abs(min_eigen_sym(Tensor::matrix({{-1, 0}, {0, 3}})) + 1.0) < 1e-12);
  CHECK_THROWS_AS(min_eigen_sym(Tensor::matrix({{1, 0.5}, {0.4, 1}})), ContractViolation);
}

TEST_CASE("min_eigen_sym is rotation invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(0, 8);
    Tensor a = symmetrize(random_tensor(rng, {n, n}, -2.0, 2.0));
    Tensor q = random_orthogonal(rng, n);
    Tensor b = symmetrize(matmul(matmul(q, a), transpose(q)));
    CHECK(std::abs(min_eigen_sym(a) - min_eigen_sym(b)) < 1e-8);
  }
}

TEST_CASE("rng determinism and forking") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);
  Rng p(9);
  Rng f1 = p.fork(1), f2 = p.fork(2);
  CHECK(f1.next_u64() != f2.next_u64());
  // Golden values pin the stream across builds and platforms.
  Rng g(0);
  CHECK(g.next_u64() == splitmix64(0));
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
}

TEST_CASE("DUOT round trip and layout") {
  Tensor t(Shape{2, 3}, std::vector<double>{1, -2, 3.5, 4, 5e-300, 6});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 4 + 4 + 8 + 6 * 8);
  CHECK(bytes.substr(0, 4) == "DUOT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[12]) == 3);
  std::stringstream in(bytes);
  CHECK(read_tensor(in) == t);
  std::stringstream bad("DUOX");
  CHECK_THROWS_AS(read_tensor(bad), FormatError);
  std::stringstream trunc(bytes.substr(0, 20));
  CHECK_THROWS_AS(read_tensor(trunc), FormatError);
}

TEST_CASE("plane maps match direct evaluation") {
  SUBCASE("bilinear 1x2 to 1x4") {
    auto m = ad::make_bilinear(1, 2, 1, 4);
    Tensor out = m->apply(Tensor(Shape{1, 2}, std::vector<double>{0, 1}));
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[1] == doctest::Approx(0.25));
    CHECK(out[2] == doctest::Approx(0.75));
    CHECK(out[3] == doctest::Approx(1.0));
  }
  SUBCASE("transpose is the adjoint") {
    Rng rng(1);
    auto m = ad::make_bilinear(3, 4, 7, 9);
    Tensor x = random_tensor(rng, {2, 3, 4}, -1, 1);
    Tensor y = random_tensor(rng, {2, 7, 9}, -1, 1);
    Tensor mx = m->apply(x);
    Tensor mty(x.shape());
    m->apply_transpose_add(y, mty);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += mx[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * mty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("conv2d and batch norm gradients") {
  Rng rng(21);
  const Tensor x0 = random_tensor(rng, {2, 2, 5, 6}, -1, 1);
  const Tensor w0 = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
  const Tensor b0 = random_tensor(rng, {3}, -0.1, 0.1);
  const Tensor gm0 = random_tensor(rng, {3}, 0.5, 1.5);
  const Tensor bt0 = random_tensor(rng, {3}, -0.2, 0.2);
  const Tensor probe = random_tensor(rng, {2, 3, 3, 3}, -1, 1);
  auto build = [&](ad::Tape& t, ad::Var x, ad::Var w) {
    auto y = ad::conv2d(x, w, t.constant(b0), 2, 1);
    y = ad::batch_norm_train(y, t.constant(gm0), t.constant(bt0), 1e-5, nullptr);
    return ad::sum(ad::mul(ad::relu(y), t.constant(probe)));
  };
  ad::Tape tape;
  auto x = tape.leaf(x0);
  auto w = tape.leaf(w0);
  auto root = build(tape, x, w);
  REQUIRE(root.shape() == Shape{});
  auto g = tape.backward(root);
  Tensor fdx = finite_difference(
      [&](const Tensor& at) {
        ad::Tape t;
        return build(t, t.constant(at), t.constant(w0)).value().item();
      },
      x0, 1e-6);
  Tensor fdw = finite_difference(
      [&](const Tensor& at) {
        ad::Tape t;
        return build(t, t.constant(x0), t.constant(at)).value().item();
      },
      w0, 1e-6);
  CHECK(gradients_close(g.at(x), fdx, 1e-4, 1e-7));
  CHECK(gradients_close(g.at(w), fdw, 1e-4, 1e-7));
}
