#pragma once

#include <string>

#include "shottrack/nn/params.hpp"
#include "shottrack/nn/tensor.hpp"

namespace shottrack::nn {

enum class Mode { train, eval };

// Same-length dilated cross-correlation over [B, C_in, L] -> [B, C_out, L]
// with zero padding (K - 1) * dilation / 2 on each side. K must be odd.
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamStore<T>& store, const std::string& name, std::size_t in_channels,
         std::size_t out_channels, std::size_t kernel, std::size_t dilation = 1);

  Tensor<T> forward(const Tensor<T>& x);
  // Accumulates weight/bias gradients; returns dL/dx unless input_grad is false.
  Tensor<T> backward(const Tensor<T>& dy, bool input_grad = true);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  Param<T>* weight_ = nullptr;  // [out, in, K]
  Param<T>* bias_ = nullptr;    // [out]
  std::size_t in_ = 0, out_ = 0, kernel_ = 1, dilation_ = 1;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm1d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm1d() = default;
  BatchNorm1d(ParamStore<T>& store, const std::string& name, std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);

  const Tensor<T>& running_mean() const { return mean_->value; }
  const Tensor<T>& running_var() const { return var_->value; }

 private:
  Param<T>* gamma_ = nullptr;
  Param<T>* beta_ = nullptr;
  Buffer<T>* mean_ = nullptr;
  Buffer<T>* var_ = nullptr;
  std::size_t channels_ = 0;
  Mode last_mode_ = Mode::eval;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

enum class ActivationKind { mish, relu, sigmoid };

template <typename T>
T activate(ActivationKind kind, T x);

template <typename T>
class Activation {
 public:
  explicit Activation(ActivationKind kind = ActivationKind::relu) : kind_(kind) {}
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  ActivationKind kind_;
  Tensor<T> input_;
  Tensor<T> output_;
};

// [B, C, L] -> [B, C], mean over L.
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  Shape input_shape_;
};

// [B, n] -> [B, m]
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  Param<T>* weight_ = nullptr;  // [out, in]
  Param<T>* bias_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;
};

// Softmax over the channel axis of [B, C, L] (or [B, C]).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

template <typename T>
class ChannelSoftmax {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  Tensor<T> output_;
};

// y[b, c, l] = x[b, c, l] * gate[b, 0, l]
template <typename T>
Tensor<T> gate_multiply(const Tensor<T>& x, const Tensor<T>& gate);
// Gradients of gate_multiply; dgate is summed over channels.
template <typename T>
void gate_multiply_backward(const Tensor<T>& x, const Tensor<T>& gate, const Tensor<T>& dy,
                            Tensor<T>& dx, Tensor<T>& dgate);

}  // namespace shottrack::nn
