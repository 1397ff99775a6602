#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace shottrack::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

// Dense row-major tensor. Activations use [batch, channels, length].
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor value count does not match shape " +
                                  shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 accessor.
  T& at(std::size_t b, std::size_t c, std::size_t l) {
    return data_[(b * shape_[1] + c) * shape_[2] + l];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t l) const {
    return data_[(b * shape_[1] + c) * shape_[2] + l];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s) {
    if (shape_size(s) != data_.size()) throw std::invalid_argument("reshape changes size");
    shape_ = std::move(s);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": expected shape " + shape_string(want) +
                                ", got " + shape_string(got));
  }
}

}  // namespace shottrack::nn
