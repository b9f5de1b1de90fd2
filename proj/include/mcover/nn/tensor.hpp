#ifndef MCOVER_NN_TENSOR_HPP
#define MCOVER_NN_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mcover/error.hpp"

namespace mcover::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Fixed 64-byte alignment keeps vectorised kernels on the same code path in
// every run, so results are bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Row-major dense tensor. Activations use the channels-last layout
// [batch, time, freq, channels].
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_size();
  }
  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& values() { return data_; }
  const AlignedVector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void reshape(Shape shape) {
    require(element_count(shape) == data_.size(), ErrorKind::kShape,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    return std::ranges::all_of(data_, [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_size() const {
    require(data_.size() == element_count(shape_), ErrorKind::kShape,
            "tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
  }

  Shape shape_;
  AlignedVector<T> data_;
};

inline void require_shape(const Shape& actual, const Shape& expected, const std::string& what) {
  if (actual != expected) {
    fail(ErrorKind::kShape, what + ": expected " + shape_string(expected) + ", got " + shape_string(actual));
  }
}

}  // namespace mcover::nn

#endif  // MCOVER_NN_TENSOR_HPP
