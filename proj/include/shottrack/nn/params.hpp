#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "shottrack/nn/tensor.hpp"

namespace shottrack::nn {

enum class Init { fan_in_uniform, zeros, ones };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // Adam first moment
  Tensor<T> v;  // Adam second moment
  Init init = Init::zeros;
  std::size_t fan_in = 1;
};

// Saved, non-trainable state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
  T initial = T(0);
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

// Owns every parameter of a model. Entries are heap allocated so the raw
// pointers held by layers stay valid when the store is moved.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Param<T>& add(std::string name, Shape shape, Init init, std::size_t fan_in = 1);
  Buffer<T>& add_buffer(std::string name, Shape shape, T initial);

  // Deterministic: parameters are visited in creation order.
  void initialize(std::uint64_t seed);
  void zero_grad();

  std::size_t parameter_count() const;
  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }
  std::size_t buffer_count() const { return buffers_.size(); }
  Buffer<T>& buffer(std::size_t i) { return *buffers_[i]; }

  std::uint64_t step = 0;

  std::vector<NamedArray> export_arrays() const;
  // Throws std::invalid_argument naming the offending array on any
  // missing name or shape mismatch.
  void import_arrays(const std::vector<NamedArray>& arrays);

  // Flat views used by gradient checks.
  std::vector<T> flat_values() const;
  std::vector<T> flat_grads() const;
  void set_flat_values(std::span<const T> values);

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::vector<std::unique_ptr<Buffer<T>>> buffers_;
};

}  // namespace shottrack::nn
