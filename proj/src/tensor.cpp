#include "rsnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace rsnet {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) throw ShapeError("negative dimension in " + shape.str());
  data_.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape.str());
  }
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
void Tensor<T>::add_(const Tensor& other, T alpha) {
  if (other.shape_ != shape_) throw ShapeError("add_: " + shape_.str() + " vs " + other.shape_.str());
  T* dst = data_.data();
  const T* src = other.data_.data();
  const std::size_t count = data_.size();
  for (std::size_t i = 0; i < count; ++i) dst[i] += alpha * src[i];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  // Sum-based fast path: any NaN/Inf poisons the accumulator.
  T acc = 0;
  for (T v : data_) acc += v * T(0);
  return std::isfinite(acc);
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("dot: " + a.shape().str() + " vs " + b.shape().str());
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double sum_squares(const Tensor<T>& a) {
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  return s;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_rel_diff: " + a.shape().str() + " vs " + b.shape().str());
  double diff = 0, scale = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max(scale, 1e-300);
}

template class Tensor<float>;
template class Tensor<double>;
template double dot(const Tensor<float>&, const Tensor<float>&);
template double dot(const Tensor<double>&, const Tensor<double>&);
template double sum_squares(const Tensor<float>&);
template double sum_squares(const Tensor<double>&);
template double max_rel_diff(const Tensor<float>&, const Tensor<float>&);
template double max_rel_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace rsnet
