#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dal::num {

using Shape = std::vector<std::size_t>;

/// Row-major dense array of doubles. Entries are required to be finite:
/// constructors and `check_finite` raise `NumericError` otherwise.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  /// Builds a rows x cols matrix from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  /// Rows / columns of a rank-2 tensor.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Value of a rank-0 or single-element tensor.
  double item() const;

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Throws NumericError naming `where` if any entry is NaN or infinite.
  void check_finite(const std::string& where) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Numerically stable log(sum(exp(v))) along `axis` of a rank-1 or rank-2
/// tensor. The reduced axis is removed from the result.
Tensor logsumexp(const Tensor& v, std::size_t axis);
/// Stable logsumexp of a contiguous range.
double logsumexp(std::span<const double> v);

/// Plain matrix product of rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace dal::num
