#ifndef MCOVER_MATRIX_HPP
#define MCOVER_MATRIX_HPP

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "mcover/error.hpp"

namespace mcover {

// Dense row-major matrix. Time-frequency data is stored time-major:
// rows are frames, columns are frequency bins.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::kShape, "matrix data size does not match dims");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T max_value() const { return data_.empty() ? T{} : *std::max_element(data_.begin(), data_.end()); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;

}  // namespace mcover

#endif  // MCOVER_MATRIX_HPP
