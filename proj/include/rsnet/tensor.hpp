#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsnet/error.hpp"

namespace rsnet {

// Batch, channels, height, width.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense rank-4 array in NCHW order, row-major and contiguous.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }

  T* plane(std::int64_t n, std::int64_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::int64_t n, std::int64_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T v);
  // In-place this += alpha * other; shapes must match.
  void add_(const Tensor& other, T alpha = T(1));
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.storage()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

// Sum of elementwise products.
template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
double sum_squares(const Tensor<T>& a);

// max |a - b| / max(max |b|, tiny); 0 for two empty tensors.
template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace rsnet
