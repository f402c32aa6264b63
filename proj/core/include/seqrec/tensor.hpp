#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// `size() == product(shape())` always holds. A scalar has shape `{}` or
/// `{1}`; both have size 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  /// Rows/cols view a tensor as a matrix whose last axis is the column axis.
  std::size_t cols() const;
  std::size_t rows() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  double item() const;
  bool is_scalar() const noexcept { return data_.size() == 1 && shape_.size() <= 1; }
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  void fill(double value);
  Tensor reshaped(Shape shape) const;

  /// Throws `Error` naming `context` when any element is NaN or infinite.
  void require_finite(const char* context) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Boolean mask with the same row-major layout as a tensor.
struct Mask {
  Shape shape;
  std::vector<unsigned char> keep;  // 1 = participates, 0 = masked

  static Mask all(Shape shape);
  std::size_t size() const noexcept { return keep.size(); }
};

// Plain (non-differentiable) numeric kernels. The tape ops in ops.hpp reuse
// these for their forward pass.

/// x * Phi(x), exact erf form.
Tensor gelu(const Tensor& x);
double gelu(double x);
double gelu_derivative(double x);

/// Row-wise softmax over the last axis; masked entries get probability 0.
Tensor softmax_masked(const Tensor& logits, const Mask& mask);
Tensor softmax(const Tensor& logits);

/// Row-wise layer normalization over the last axis (population variance).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace seqrec
