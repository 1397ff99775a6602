#include "shottrack/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace shottrack::nn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

void require_rank3(const Shape& s, const char* what) {
  if (s.size() != 3) {
    throw std::invalid_argument(std::string(what) + ": expected [B, C, L], got " + shape_string(s));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv1d

template <typename T>
Conv1d<T>::Conv1d(ParamStore<T>& store, const std::string& name, std::size_t in_channels,
                  std::size_t out_channels, std::size_t kernel, std::size_t dilation)
    : in_(in_channels), out_(out_channels), kernel_(kernel), dilation_(dilation) {
  if (kernel % 2 == 0) throw std::invalid_argument(name + ": kernel size must be odd");
  if (dilation < 1) throw std::invalid_argument(name + ": dilation must be >= 1");
  if (in_channels == 0 || out_channels == 0) throw std::invalid_argument(name + ": zero channels");
  weight_ = &store.add(name + ".weight", {out_, in_, kernel_}, Init::fan_in_uniform, in_ * kernel_);
  bias_ = &store.add(name + ".bias", {out_}, Init::zeros);
}

template <typename T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x) {
  require_rank3(x.shape(), "conv1d");
  if (x.dim(1) != in_) {
    throw std::invalid_argument("conv1d: expected " + std::to_string(in_) + " input channels, got " +
                                std::to_string(x.dim(1)));
  }
  input_ = x;
  const std::size_t batch = x.dim(0), len = x.dim(2);
  const std::size_t rows = in_ * kernel_;
  const auto pad = static_cast<std::ptrdiff_t>((kernel_ - 1) * dilation_ / 2);
  Tensor<T> y({batch, out_, len});
  ConstMatMap<T> w(weight_->value.data(), out_, rows);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_->value.data(), out_);
  RowMatrix<T> cols;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xb = x.data() + n * in_ * len;
    MatMap<T> yb(y.data() + n * out_ * len, out_, len);
    if (kernel_ == 1) {
      yb.noalias() = w * ConstMatMap<T>(xb, in_, len);
    } else {
      cols.setZero(rows, len);
      for (std::size_t c = 0; c < in_; ++c) {
        for (std::size_t k = 0; k < kernel_; ++k) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k * dilation_) - pad;
          T* dst = cols.data() + (c * kernel_ + k) * len;
          const T* src = xb + c * len;
          for (std::size_t l = 0; l < len; ++l) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(l) + shift;
            if (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) dst[l] = src[s];
          }
        }
      }
      yb.noalias() = w * cols;
    }
    yb.colwise() += b;
  }
  return y;
}

template <typename T>
Tensor<T> Conv1d<T>::backward(const Tensor<T>& dy, bool input_grad) {
  const std::size_t batch = input_.dim(0), len = input_.dim(2);
  require_shape(dy.shape(), {batch, out_, len}, "conv1d backward");
  const std::size_t rows = in_ * kernel_;
  const auto pad = static_cast<std::ptrdiff_t>((kernel_ - 1) * dilation_ / 2);
  MatMap<T> dw(weight_->grad.data(), out_, rows);
  ConstMatMap<T> w(weight_->value.data(), out_, rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_->grad.data(), out_);
  Tensor<T> dx;
  if (input_grad) dx = Tensor<T>(input_.shape());
  RowMatrix<T> cols;
  RowMatrix<T> dcols;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xb = input_.data() + n * in_ * len;
    ConstMatMap<T> dyb(dy.data() + n * out_ * len, out_, len);
    for (std::size_t o = 0; o < out_; ++o) {
      const T* row = dy.data() + (n * out_ + o) * len;
      T acc = T(0);
      for (std::size_t l = 0; l < len; ++l) acc += row[l];
      db[o] += acc;
    }
    if (kernel_ == 1) {
      ConstMatMap<T> xm(xb, in_, len);
      dw.noalias() += dyb * xm.transpose();
      if (input_grad) MatMap<T>(dx.data() + n * in_ * len, in_, len).noalias() = w.transpose() * dyb;
      continue;
    }
    cols.setZero(rows, len);
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t k = 0; k < kernel_; ++k) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k * dilation_) - pad;
        T* dst = cols.data() + (c * kernel_ + k) * len;
        const T* src = xb + c * len;
        for (std::size_t l = 0; l < len; ++l) {
          const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(l) + shift;
          if (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) dst[l] = src[s];
        }
      }
    }
    dw.noalias() += dyb * cols.transpose();
    if (!input_grad) continue;
    dcols.noalias() = w.transpose() * dyb;
    T* dxb = dx.data() + n * in_ * len;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t k = 0; k < kernel_; ++k) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k * dilation_) - pad;
        const T* src = dcols.data() + (c * kernel_ + k) * len;
        T* dst = dxb + c * len;
        for (std::size_t l = 0; l < len; ++l) {
          const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(l) + shift;
          if (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) dst[s] += src[l];
        }
      }
    }
  }
  return dx;
}

// ----------------------------------------------------------- BatchNorm1d

template <typename T>
BatchNorm1d<T>::BatchNorm1d(ParamStore<T>& store, const std::string& name, std::size_t channels)
    : channels_(channels) {
  gamma_ = &store.add(name + ".weight", {channels}, Init::ones);
  beta_ = &store.add(name + ".bias", {channels}, Init::zeros);
  mean_ = &store.add_buffer(name + ".running_mean", {channels}, T(0));
  var_ = &store.add_buffer(name + ".running_var", {channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm1d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank3(x.shape(), "batch_norm");
  if (x.dim(1) != channels_) throw std::invalid_argument("batch_norm: channel mismatch");
  const std::size_t batch = x.dim(0), len = x.dim(2);
  const std::size_t count = batch * len;
  last_mode_ = mode;
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(channels_, T(0));
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      if (count < 2) throw std::invalid_argument("batch_norm: train mode needs batch*length > 1");
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t l = 0; l < len; ++l) mean += x.at(n, c, l);
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t l = 0; l < len; ++l) {
          const double d = x.at(n, c, l) - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      mean_->value[c] = static_cast<T>((1.0 - kMomentum) * mean_->value[c] + kMomentum * mean);
      var_->value[c] = static_cast<T>((1.0 - kMomentum) * var_->value[c] + kMomentum * unbiased);
    } else {
      mean = mean_->value[c];
      var = var_->value[c];
    }
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = static_cast<T>(inv);
    const T g = gamma_->value[c], b = beta_->value[c];
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t l = 0; l < len; ++l) {
        const T xh = static_cast<T>((x.at(n, c, l) - mean) * inv);
        xhat_.at(n, c, l) = xh;
        y.at(n, c, l) = g * xh + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm1d<T>::backward(const Tensor<T>& dy) {
  require_shape(dy.shape(), xhat_.shape(), "batch_norm backward");
  const std::size_t batch = dy.dim(0), len = dy.dim(2);
  const double count = static_cast<double>(batch * len);
  Tensor<T> dx(dy.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t l = 0; l < len; ++l) {
        sum_dy += dy.at(n, c, l);
        sum_dy_xhat += static_cast<double>(dy.at(n, c, l)) * xhat_.at(n, c, l);
      }
    }
    gamma_->grad[c] += static_cast<T>(sum_dy_xhat);
    beta_->grad[c] += static_cast<T>(sum_dy);
    const double g = gamma_->value[c];
    const double inv = inv_std_[c];
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t l = 0; l < len; ++l) {
        if (last_mode_ == Mode::eval) {
          dx.at(n, c, l) = static_cast<T>(dy.at(n, c, l) * g * inv);
        } else {
          const double v = count * dy.at(n, c, l) - sum_dy - xhat_.at(n, c, l) * sum_dy_xhat;
          dx.at(n, c, l) = static_cast<T>(g * inv / count * v);
        }
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------ Activation

namespace {

// tanh(softplus(x)) = n / (n + 2) with n = e^x (e^x + 2).
template <typename T>
T tanh_softplus(T x) {
  if (x > T(20)) return T(1);
  const T e = std::exp(x);
  const T n = e * (e + T(2));
  return n / (n + T(2));
}

// Vectorised mish over aligned fixed-size blocks. Every element goes through
// the same packet path, so results do not depend on buffer alignment.
template <typename T>
void mish_forward(const T* x, T* y, std::size_t n) {
  constexpr std::size_t kBlock = 256;
  Eigen::Array<T, kBlock, 1> xb, yb;
  for (std::size_t i = 0; i < n; i += kBlock) {
    const std::size_t m = std::min(kBlock, n - i);
    xb.setZero();
    std::copy(x + i, x + i + m, xb.data());
    yb = xb.min(T(20)).exp();
    yb = yb * (yb + T(2));
    yb = (xb > T(20)).select(xb, xb * yb / (yb + T(2)));
    std::copy(yb.data(), yb.data() + m, y + i);
  }
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
T activate(ActivationKind kind, T x) {
  switch (kind) {
    case ActivationKind::mish:
      return x * tanh_softplus(x);
    case ActivationKind::relu:
      return x > T(0) ? x : T(0);
    case ActivationKind::sigmoid:
      return sigmoid(x);
  }
  return x;
}

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x) {
  input_ = x;
  output_ = Tensor<T>(x.shape());
  if (kind_ == ActivationKind::mish) {
    mish_forward(x.data(), output_.data(), x.size());
    return output_;
  }
  for (std::size_t i = 0; i < x.size(); ++i) output_[i] = activate(kind_, x[i]);
  return output_;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& dy) {
  require_shape(dy.shape(), input_.shape(), "activation backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T x = input_[i];
    T d = T(0);
    switch (kind_) {
      case ActivationKind::mish: {
        const T t = tanh_softplus(x);
        d = t + x * (T(1) - t * t) * sigmoid(x);
        break;
      }
      case ActivationKind::relu:
        d = x > T(0) ? T(1) : T(0);
        break;
      case ActivationKind::sigmoid: {
        const T s = output_[i];
        d = s * (T(1) - s);
        break;
      }
    }
    dx[i] = dy[i] * d;
  }
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  require_rank3(x.shape(), "gap");
  input_shape_ = x.shape();
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (len == 0) throw std::invalid_argument("gap: empty length");
  Tensor<T> y({batch, ch});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) s += x.at(n, c, l);
      y[n * ch + c] = static_cast<T>(s / static_cast<double>(len));
    }
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) {
  const std::size_t batch = input_shape_[0], ch = input_shape_[1], len = input_shape_[2];
  require_shape(dy.shape(), {batch, ch}, "gap backward");
  Tensor<T> dx(input_shape_);
  const T scale = T(1) / static_cast<T>(len);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const T g = dy[n * ch + c] * scale;
      for (std::size_t l = 0; l < len; ++l) dx.at(n, c, l) = g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
    : in_(in), out_(out) {
  weight_ = &store.add(name + ".weight", {out, in}, Init::fan_in_uniform, in);
  bias_ = &store.add(name + ".bias", {out}, Init::zeros);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw std::invalid_argument("linear: expected [B, " + std::to_string(in_) + "], got " +
                                shape_string(x.shape()));
  }
  input_ = x;
  const std::size_t batch = x.dim(0);
  Tensor<T> y({batch, out_});
  MatMap<T> ym(y.data(), batch, out_);
  ym.noalias() = ConstMatMap<T>(x.data(), batch, in_) *
                 ConstMatMap<T>(weight_->value.data(), out_, in_).transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_->value.data(), out_);
  ym.rowwise() += b;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const std::size_t batch = input_.dim(0);
  require_shape(dy.shape(), {batch, out_}, "linear backward");
  ConstMatMap<T> dym(dy.data(), batch, out_);
  MatMap<T>(weight_->grad.data(), out_, in_).noalias() +=
      dym.transpose() * ConstMatMap<T>(input_.data(), batch, in_);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_; ++o) bias_->grad[o] += dy[n * out_ + o];
  Tensor<T> dx({batch, in_});
  MatMap<T>(dx.data(), batch, in_).noalias() = dym * ConstMatMap<T>(weight_->value.data(), out_, in_);
  return dx;
}

// --------------------------------------------------------------- Softmax

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const std::size_t batch = logits.dim(0), ch = logits.dim(1);
  const std::size_t len = logits.rank() == 3 ? logits.dim(2) : 1;
  Tensor<T> y(logits.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      const std::size_t base = n * ch * len + l;
      T mx = logits[base];
      for (std::size_t c = 1; c < ch; ++c) mx = std::max(mx, logits[base + c * len]);
      double s = 0.0;
      for (std::size_t c = 0; c < ch; ++c) s += std::exp(static_cast<double>(logits[base + c * len] - mx));
      for (std::size_t c = 0; c < ch; ++c) {
        y[base + c * len] = static_cast<T>(std::exp(static_cast<double>(logits[base + c * len] - mx)) / s);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> ChannelSoftmax<T>::forward(const Tensor<T>& x) {
  output_ = softmax_channels(x);
  return output_;
}

template <typename T>
Tensor<T> ChannelSoftmax<T>::backward(const Tensor<T>& dy) {
  require_shape(dy.shape(), output_.shape(), "softmax backward");
  const std::size_t batch = dy.dim(0), ch = dy.dim(1);
  const std::size_t len = dy.rank() == 3 ? dy.dim(2) : 1;
  Tensor<T> dx(dy.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      const std::size_t base = n * ch * len + l;
      T dot = 0;
      for (std::size_t c = 0; c < ch; ++c) dot += dy[base + c * len] * output_[base + c * len];
      for (std::size_t c = 0; c < ch; ++c) {
        dx[base + c * len] = output_[base + c * len] * (dy[base + c * len] - dot);
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------ Gate (mul)

template <typename T>
Tensor<T> gate_multiply(const Tensor<T>& x, const Tensor<T>& gate) {
  require_rank3(x.shape(), "gate_multiply");
  require_shape(gate.shape(), {x.dim(0), 1, x.dim(2)}, "gate_multiply gate");
  Tensor<T> y(x.shape());
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* g = gate.data() + n * len;
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t l = 0; l < len; ++l) y.at(n, c, l) = x.at(n, c, l) * g[l];
    }
  }
  return y;
}

template <typename T>
void gate_multiply_backward(const Tensor<T>& x, const Tensor<T>& gate, const Tensor<T>& dy,
                            Tensor<T>& dx, Tensor<T>& dgate) {
  require_shape(dy.shape(), x.shape(), "gate_multiply backward");
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  dx = Tensor<T>(x.shape());
  dgate = Tensor<T>(gate.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* g = gate.data() + n * len;
    T* dg = dgate.data() + n * len;
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t l = 0; l < len; ++l) {
        dx.at(n, c, l) = dy.at(n, c, l) * g[l];
        dg[l] += dy.at(n, c, l) * x.at(n, c, l);
      }
    }
  }
}

#define SHOTTRACK_INSTANTIATE(T)                                                            \
  template class Conv1d<T>;                                                                 \
  template class BatchNorm1d<T>;                                                            \
  template class Activation<T>;                                                             \
  template class GlobalAvgPool<T>;                                                          \
  template class Linear<T>;                                                                 \
  template class ChannelSoftmax<T>;                                                         \
  template T activate<T>(ActivationKind, T);                                                \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);                                 \
  template Tensor<T> gate_multiply<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template void gate_multiply_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          Tensor<T>&, Tensor<T>&);

SHOTTRACK_INSTANTIATE(float)
SHOTTRACK_INSTANTIATE(double)

#undef SHOTTRACK_INSTANTIATE

}  // namespace shottrack::nn
