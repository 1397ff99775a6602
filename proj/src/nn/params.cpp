#include "shottrack/nn/params.hpp"

#include <cmath>
#include <sstream>

namespace shottrack::nn {

std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

template <typename T>
Param<T>& ParamStore<T>::add(std::string name, Shape shape, Init init, std::size_t fan_in) {
  auto p = std::make_unique<Param<T>>();
  p->name = std::move(name);
  p->value = Tensor<T>(shape);
  p->grad = Tensor<T>(shape);
  p->m = Tensor<T>(shape);
  p->v = Tensor<T>(shape);
  p->init = init;
  p->fan_in = fan_in;
  if (init == Init::ones) p->value.fill(T(1));
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Buffer<T>& ParamStore<T>::add_buffer(std::string name, Shape shape, T initial) {
  auto b = std::make_unique<Buffer<T>>();
  b->name = std::move(name);
  b->value = Tensor<T>(std::move(shape), initial);
  b->initial = initial;
  buffers_.push_back(std::move(b));
  return *buffers_.back();
}

template <typename T>
void ParamStore<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    switch (p->init) {
      case Init::fan_in_uniform: {
        const double bound = std::sqrt(1.0 / static_cast<double>(p->fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : p->value.values()) v = static_cast<T>(dist(rng));
        break;
      }
      case Init::zeros:
        p->value.fill(T(0));
        break;
      case Init::ones:
        p->value.fill(T(1));
        break;
    }
    p->grad.fill(T(0));
    p->m.fill(T(0));
    p->v.fill(T(0));
  }
  for (auto& b : buffers_) b->value.fill(b->initial);
  step = 0;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.fill(T(0));
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
std::vector<NamedArray> ParamStore<T>::export_arrays() const {
  std::vector<NamedArray> out;
  out.reserve(params_.size() + buffers_.size());
  for (const auto& p : params_) {
    out.push_back({p->name, p->value.shape(),
                   std::vector<float>(p->value.values().begin(), p->value.values().end())});
  }
  for (const auto& b : buffers_) {
    out.push_back({b->name, b->value.shape(),
                   std::vector<float>(b->value.values().begin(), b->value.values().end())});
  }
  return out;
}

template <typename T>
void ParamStore<T>::import_arrays(const std::vector<NamedArray>& arrays) {
  auto find = [&](const std::string& name) -> const NamedArray& {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw std::invalid_argument("missing parameter array '" + name + "'");
  };
  auto load = [&](const std::string& name, Tensor<T>& dst) {
    const auto& a = find(name);
    if (a.shape != dst.shape() || a.values.size() != dst.size()) {
      throw std::invalid_argument("shape mismatch for '" + name + "': expected " +
                                  shape_string(dst.shape()) + ", got " + shape_string(a.shape));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  };
  if (arrays.size() != params_.size() + buffers_.size()) {
    throw std::invalid_argument("expected " + std::to_string(params_.size() + buffers_.size()) +
                                " arrays, got " + std::to_string(arrays.size()));
  }
  for (auto& p : params_) load(p->name, p->value);
  for (auto& b : buffers_) load(b->name, b->value);
}

template <typename T>
std::vector<T> ParamStore<T>::flat_values() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  return out;
}

template <typename T>
std::vector<T> ParamStore<T>::flat_grads() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) out.insert(out.end(), p->grad.values().begin(), p->grad.values().end());
  return out;
}

template <typename T>
void ParamStore<T>::set_flat_values(std::span<const T> values) {
  if (values.size() != parameter_count()) throw std::invalid_argument("flat size mismatch");
  std::size_t k = 0;
  for (auto& p : params_) {
    for (auto& v : p->value.values()) v = values[k++];
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace shottrack::nn
