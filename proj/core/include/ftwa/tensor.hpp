#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ftwa {

/// NCHW extents. Vectors are stored as (N, D, 1, 1) and scalars as (1, 1, 1, 1).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int h = 0, int w = 0) {
    return data_[index(n, c, h, w)];
  }
  const T& at(int n, int c, int h = 0, int w = 0) const {
    return data_[index(n, c, h, w)];
  }

  /// Scalar value of a one-element tensor.
  T item() const;

  void fill(T v);
  Tensor& operator+=(const Tensor& other);

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Throws ShapeError naming both shapes unless they match.
void require_same_shape(const Shape& expected, const Shape& actual, const std::string& what);

/// Largest absolute elementwise difference.
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace ftwa
