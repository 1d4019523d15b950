#include "ftwa/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ftwa/errors.hpp"

namespace ftwa {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

void require_same_shape(const Shape& expected, const Shape& actual, const std::string& what) {
  if (!(expected == actual)) {
    throw ShapeError(what + ": expected shape " + expected.str() + ", got " + actual.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                     " elements but shape " + shape_.str() + " needs " +
                     std::to_string(shape_.size()));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_.str());
  }
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T best = 0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace ftwa
