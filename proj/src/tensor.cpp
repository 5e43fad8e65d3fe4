#include "duo/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "duo/errors.hpp"

namespace duo {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) DUO_REQUIRE(d > 0, "tensor dimensions must be positive");
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) DUO_REQUIRE(d > 0, "tensor dimensions must be positive");
  DUO_REQUIRE(data_.size() == shape_size(shape_),
              "data length " + std::to_string(data_.size()) + " does not match shape " +
                  shape_string(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    DUO_REQUIRE(row.size() == c, "ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  DUO_REQUIRE(data_.size() == 1, "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  DUO_REQUIRE(shape_size(shape) == data_.size(), "reshape changes element count");
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor& Tensor::operator+=(const Tensor& o) {
  DUO_REQUIRE(o.shape_ == shape_, "shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  DUO_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
              "matmul shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += aip * b.at(p, j);
    }
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  DUO_REQUIRE(a.rank() == 2 && x.rank() == 1 && a.dim(1) == x.dim(0), "matvec shape mismatch");
  Tensor out(Shape{a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.dim(1); ++j) s += a.at(i, j) * x[j];
    out[i] = s;
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  DUO_REQUIRE(a.rank() == 2, "transpose needs a matrix");
  Tensor out(Shape{a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

}  // namespace duo
