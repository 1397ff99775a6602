#pragma once

#include <span>

#include "shottrack/nn/params.hpp"
#include "shottrack/nn/tensor.hpp"

namespace shottrack::nn {

template <typename T>
struct LossResult {
  T loss = T(0);
  Tensor<T> grad;  // dL/dlogits, same shape as logits
};

// Mean over rows of -w[y] * log softmax(logits)[y]. Logits are [N, C] or
// [B, C, L]; in the latter case every (b, l) position is a row and targets
// are laid out b-major. Empty class_weights means unit weights.
template <typename T>
LossResult<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                     std::span<const T> class_weights = {});

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update with bias correction over every parameter in the store.
template <typename T>
void adam_step(ParamStore<T>& store, T lr, const AdamOptions& opt = {});

}  // namespace shottrack::nn
