#include "shottrack/nn/loss.hpp"

#include <cmath>

namespace shottrack::nn {

template <typename T>
LossResult<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                     std::span<const T> class_weights) {
  if (logits.rank() != 2 && logits.rank() != 3) {
    throw std::invalid_argument("cross entropy: logits must be [N, C] or [B, C, L]");
  }
  const std::size_t batch = logits.dim(0), ch = logits.dim(1);
  const std::size_t len = logits.rank() == 3 ? logits.dim(2) : 1;
  const std::size_t rows = batch * len;
  if (targets.size() != rows) {
    throw std::invalid_argument("cross entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  }
  if (!class_weights.empty() && class_weights.size() != ch) {
    throw std::invalid_argument("cross entropy: class weight count mismatch");
  }
  for (auto w : class_weights) {
    if (!(w > T(0))) throw std::invalid_argument("cross entropy: weights must be positive");
  }

  LossResult<T> out;
  out.grad = Tensor<T>(logits.shape());
  double total = 0.0;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<double> prob(ch);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      const int y = targets[n * len + l];
      if (y < 0 || static_cast<std::size_t>(y) >= ch) {
        throw std::out_of_range("cross entropy: target " + std::to_string(y) + " out of range");
      }
      const std::size_t base = n * ch * len + l;
      double mx = logits[base];
      for (std::size_t c = 1; c < ch; ++c) mx = std::max(mx, static_cast<double>(logits[base + c * len]));
      double s = 0.0;
      for (std::size_t c = 0; c < ch; ++c) {
        prob[c] = std::exp(static_cast<double>(logits[base + c * len]) - mx);
        s += prob[c];
      }
      const double lse = mx + std::log(s);
      const double w = class_weights.empty() ? 1.0 : static_cast<double>(class_weights[y]);
      total += w * (lse - static_cast<double>(logits[base + y * len]));
      for (std::size_t c = 0; c < ch; ++c) {
        const double p = prob[c] / s;
        const double g = w * (p - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_rows;
        out.grad[base + c * len] = static_cast<T>(g);
      }
    }
  }
  out.loss = static_cast<T>(total * inv_rows);
  return out;
}

template <typename T>
void adam_step(ParamStore<T>& store, T lr, const AdamOptions& opt) {
  store.step += 1;
  const double t = static_cast<double>(store.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T step_size = static_cast<T>(static_cast<double>(lr) / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(opt.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    T* theta = p.value.data();
    const T* g = p.grad.data();
    T* m = p.m.data();
    T* v = p.v.data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      theta[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
}

template LossResult<float> weighted_cross_entropy<float>(const Tensor<float>&, std::span<const int>,
                                                         std::span<const float>);
template LossResult<double> weighted_cross_entropy<double>(const Tensor<double>&,
                                                           std::span<const int>,
                                                           std::span<const double>);
template void adam_step<float>(ParamStore<float>&, float, const AdamOptions&);
template void adam_step<double>(ParamStore<double>&, double, const AdamOptions&);

}  // namespace shottrack::nn
