#include "dal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dal/error.hpp"

namespace dal::num {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (!std::isfinite(fill)) throw NumericError("tensor fill value is not finite");
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
  check_finite("tensor construction");
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape_));
  }
  return data_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

void Tensor::check_finite(const std::string& where) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError("non-finite value at index " + std::to_string(i) + " in " + where);
    }
  }
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("logsumexp of an empty range");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) throw NumericError("logsumexp input is not finite");
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Tensor logsumexp(const Tensor& v, std::size_t axis) {
  if (v.size() == 0) throw InvalidArgument("logsumexp of an empty tensor");
  if (v.rank() == 1) {
    if (axis != 0) throw ShapeError("logsumexp axis out of range");
    return Tensor::scalar(logsumexp(v.data()));
  }
  if (v.rank() != 2) throw ShapeError("logsumexp supports rank-1 and rank-2 tensors");
  const std::size_t r = v.rows(), c = v.cols();
  if (axis == 1) {
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) out[i] = logsumexp(v.row(i));
    return Tensor({r}, std::move(out));
  }
  if (axis == 0) {
    std::vector<double> out(c), col(r);
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t i = 0; i < r; ++i) col[i] = v.at(i, j);
      out[j] = logsumexp(col);
    }
    return Tensor({c}, std::move(out));
  }
  throw ShapeError("logsumexp axis out of range");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  const auto& A = a.storage();
  const auto& B = b.storage();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * brow[j];
    }
  }
  return Tensor({n, m}, std::move(out));
}

}  // namespace dal::num
