#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cytonet/error.hpp"

namespace cytonet {

/// Ordered list of extents; every extent must be >= 1.
using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 1) throw ShapeError("tensor extent must be >= 1, got " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

/// Dense N-dimensional array, row-major, value semantics.
/// Image tensors follow the (batch, channel, height, width) convention.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& e : t.data_) e = v;
    return t;
  }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }
  static Tensor from(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// (batch, channel, row, col) indexing for 4-D tensors.
  T& at4(int b, int c, int y, int x) { return data_[flat4(b, c, y, x)]; }
  const T& at4(int b, int c, int y, int x) const { return data_[flat4(b, c, y, x)]; }

  T& at2(int r, int c) {
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_[1]) +
                 static_cast<std::size_t>(c)];
  }
  const T& at2(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_[1]) +
                 static_cast<std::size_t>(c)];
  }

  std::size_t flat4(int b, int c, int y, int x) const {
    const std::size_t C = static_cast<std::size_t>(shape_[1]);
    const std::size_t H = static_cast<std::size_t>(shape_[2]);
    const std::size_t W = static_cast<std::size_t>(shape_[3]);
    return ((static_cast<std::size_t>(b) * C + static_cast<std::size_t>(c)) * H +
            static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Copies channels [c0, c1) of a NCHW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  if (x.ndim() != 4) throw ShapeError("slice_channels expects a 4-D tensor");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeError("slice_channels: bad channel range");
  Tensor<T> out({B, c1 - c0, H, W});
  for (int b = 0; b < B; ++b)
    for (int c = c0; c < c1; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) out.at4(b, c - c0, y, xx) = x.at4(b, c, y, xx);
  return out;
}

}  // namespace cytonet
