#include "seqrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace seqrec {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
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

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw Error("tensor shape " + shape_string(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw Error("axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : data_.size() / c;
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) throw Error("item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::require_finite(const char* context) const {
  for (double v : data_) {
    if (!std::isfinite(v)) throw Error(std::string("non-finite value produced by ") + context);
  }
}

Mask Mask::all(Shape shape) {
  const std::size_t n = shape_size(shape);
  return Mask{std::move(shape), std::vector<unsigned char>(n, 1)};
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::sqrt(2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
  return out;
}

Tensor softmax_masked(const Tensor& logits, const Mask& mask) {
  if (mask.shape != logits.shape()) {
    throw Error("softmax mask shape " + shape_string(mask.shape) + " != logits " +
                shape_string(logits.shape()));
  }
  Tensor out(logits.shape());
  const std::size_t cols = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const std::size_t base = r * cols;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask.keep[base + c]) top = std::max(top, logits[base + c]);
    }
    if (top == -std::numeric_limits<double>::infinity()) throw Error("empty attention row");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = mask.keep[base + c] ? std::exp(logits[base + c] - top) : 0.0;
      out[base + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[base + c] /= total;
  }
  return out;
}

Tensor softmax(const Tensor& logits) { return softmax_masked(logits, Mask::all(logits.shape())); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  const std::size_t cols = x.cols();
  if (gain.size() != cols || offset.size() != cols) {
    throw Error("layer_norm gain/offset length must equal last dimension " + std::to_string(cols));
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    const double denom = std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      const double normed = denom > 0.0 ? (in[c] - mean) / denom : 0.0;
      o[c] = normed * gain[c] + offset[c];
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error("matmul shape mismatch " + shape_string(a.shape()) + " x " +
                shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
    }
  }
  return out;
}

}  // namespace seqrec
