// Copyright 2026 The voxclass Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Layers with hand-written backward passes. Each layer caches what its
// backward needs during a recorded forward and accumulates into Param::grad.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "voxclass/error.hpp"
#include "voxclass/nn/tensor.hpp"
#include "voxclass/random.hpp"

namespace voxclass::nn {

enum class Mode { train, eval };

struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // dropout masks in train mode
  bool record = false;  // keep caches for backward
};

using Int3 = std::array<std::size_t, 3>;

namespace detail {

// Output index range [lo, hi) for which in = out * stride + tap - pad lies in [0, n).
inline void valid_range(std::size_t n, std::size_t out_n, std::size_t stride, std::size_t tap, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const auto st = static_cast<std::ptrdiff_t>(stride);
  const auto off = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t l = off >= 0 ? 0 : (-off + st - 1) / st;
  std::ptrdiff_t h = sn - 1 - off < 0 ? 0 : (sn - 1 - off) / st + 1;
  if (h > static_cast<std::ptrdiff_t>(out_n)) h = static_cast<std::ptrdiff_t>(out_n);
  if (l > h) l = h;
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

template <typename T>
T dot_strided(const T* __restrict a, const T* __restrict b, std::size_t n, std::size_t stride) {
  T s{};
  if (stride == 1) {
#pragma omp simd reduction(+ : s)
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i * stride];
  }
  return s;
}

}  // namespace detail

/// 3D convolution without bias, weights (O, C, kD, kH, kW).
template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, std::size_t in_ch, std::size_t out_ch, Int3 kernel, Int3 stride, Int3 pad)
      : weight(name + ".weight", {out_ch, in_ch, kernel[0], kernel[1], kernel[2]}),
        in_ch_(in_ch), out_ch_(out_ch), k_(kernel), s_(stride), p_(pad) {}

  Param<T> weight;

  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }

  std::size_t out_size(std::size_t n, int axis) const { return (n + 2 * p_[axis] - k_[axis]) / s_[axis] + 1; }

  /// Kaiming-normal, fan-out mode.
  void init(Rng& rng) {
    const double fan_out = static_cast<double>(out_ch_ * k_[0] * k_[1] * k_[2]);
    const double std = std::sqrt(2.0 / fan_out);
    for (auto& v : weight.value) v = static_cast<T>(std * normal(rng));
  }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    require_rank5(x.shape(), "Conv3d");
    if (x.dim(1) != in_ch_) fail(ErrorKind::shape, weight.name + ": channel mismatch, got " + to_string(x.shape()));
    const std::size_t N = x.dim(0), C = in_ch_, D = x.dim(2), H = x.dim(3), W = x.dim(4);
    if (D + 2 * p_[0] < k_[0] || H + 2 * p_[1] < k_[1] || W + 2 * p_[2] < k_[2])
      fail(ErrorKind::shape, weight.name + ": input " + to_string(x.shape()) + " smaller than kernel");
    const std::size_t OD = out_size(D, 0), OH = out_size(H, 1), OW = out_size(W, 2), O = out_ch_;
    Tensor<T> y({N, O, OD, OH, OW});
    const T* __restrict xp = x.data();
    const T* __restrict wp = weight.value.data();
    T* __restrict yp = y.data();
    std::array<std::size_t, 16> lo{}, hi{};
    const std::size_t KW = k_[2];
    // kernel widths above 16 are not used by any architecture here
    if (KW > lo.size()) fail(ErrorKind::configuration, "kernel width too large");
    for (std::size_t kw = 0; kw < KW; ++kw) detail::valid_range(W, OW, s_[2], kw, p_[2], lo[kw], hi[kw]);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t od = 0; od < OD; ++od)
          for (std::size_t oh = 0; oh < OH; ++oh) {
            T* __restrict yrow = yp + (((n * O + o) * OD + od) * OH + oh) * OW;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t kd = 0; kd < k_[0]; ++kd) {
                const auto id = static_cast<std::ptrdiff_t>(od * s_[0] + kd) - static_cast<std::ptrdiff_t>(p_[0]);
                if (id < 0 || id >= static_cast<std::ptrdiff_t>(D)) continue;
                for (std::size_t kh = 0; kh < k_[1]; ++kh) {
                  const auto ih = static_cast<std::ptrdiff_t>(oh * s_[1] + kh) - static_cast<std::ptrdiff_t>(p_[1]);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  const T* xrow = xp + (((n * C + c) * D + static_cast<std::size_t>(id)) * H + static_cast<std::size_t>(ih)) * W;
                  const T* wk = wp + (((o * C + c) * k_[0] + kd) * k_[1] + kh) * KW;
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    const T wv = wk[kw];
                    const std::size_t l = lo[kw], h = hi[kw];
                    if (l >= h) continue;
                    const T* __restrict xs = xrow + (l * s_[2] + kw - p_[2]);
                    T* __restrict ys = yrow + l;
                    const std::size_t len = h - l;
                    if (s_[2] == 1) {
#pragma omp simd
                      for (std::size_t i = 0; i < len; ++i) ys[i] += wv * xs[i];
                    } else {
                      const std::size_t st = s_[2];
                      for (std::size_t i = 0; i < len; ++i) ys[i] += wv * xs[i * st];
                    }
                  }
                }
              }
          }
    if (ctx.record) input_ = x;
    return y;
  }

  /// Accumulates the weight gradient; returns the input gradient unless
  /// `need_input_grad` is false (first layer).
  Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
    if (input_.empty()) fail(ErrorKind::state, weight.name + ": backward without a recorded forward");
    const Tensor<T>& x = input_;
    const std::size_t N = x.dim(0), C = in_ch_, D = x.dim(2), H = x.dim(3), W = x.dim(4);
    const std::size_t O = out_ch_, OD = gy.dim(2), OH = gy.dim(3), OW = gy.dim(4), KW = k_[2];
    Tensor<T> gx;
    if (need_input_grad) gx = Tensor<T>(x.shape());
    const T* __restrict xp = x.data();
    const T* __restrict gp = gy.data();
    const T* __restrict wp = weight.value.data();
    T* __restrict gwp = weight.grad.data();
    T* __restrict gxp = need_input_grad ? gx.data() : nullptr;
    std::array<std::size_t, 16> lo{}, hi{};
    for (std::size_t kw = 0; kw < KW; ++kw) detail::valid_range(W, OW, s_[2], kw, p_[2], lo[kw], hi[kw]);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t od = 0; od < OD; ++od)
          for (std::size_t oh = 0; oh < OH; ++oh) {
            const T* __restrict grow = gp + (((n * O + o) * OD + od) * OH + oh) * OW;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t kd = 0; kd < k_[0]; ++kd) {
                const auto id = static_cast<std::ptrdiff_t>(od * s_[0] + kd) - static_cast<std::ptrdiff_t>(p_[0]);
                if (id < 0 || id >= static_cast<std::ptrdiff_t>(D)) continue;
                for (std::size_t kh = 0; kh < k_[1]; ++kh) {
                  const auto ih = static_cast<std::ptrdiff_t>(oh * s_[1] + kh) - static_cast<std::ptrdiff_t>(p_[1]);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  const std::size_t row = (((n * C + c) * D + static_cast<std::size_t>(id)) * H + static_cast<std::size_t>(ih)) * W;
                  const std::size_t wbase = (((o * C + c) * k_[0] + kd) * k_[1] + kh) * KW;
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    const std::size_t l = lo[kw], h = hi[kw];
                    if (l >= h) continue;
                    const std::size_t off = row + l * s_[2] + kw - p_[2];
                    gwp[wbase + kw] += detail::dot_strided(grow + l, xp + off, h - l, s_[2]);
                    if (gxp) {
                      const T wv = wp[wbase + kw];
                      T* __restrict gxs = gxp + off;
                      const T* __restrict gs = grow + l;
                      const std::size_t len = h - l;
                      if (s_[2] == 1) {
#pragma omp simd
                        for (std::size_t i = 0; i < len; ++i) gxs[i] += wv * gs[i];
                      } else {
                        const std::size_t st = s_[2];
                        for (std::size_t i = 0; i < len; ++i) gxs[i * st] += wv * gs[i];
                      }
                    }
                  }
                }
              }
          }
    input_ = Tensor<T>();
    return gx;
  }

  void clear_cache() { input_ = Tensor<T>(); }

 private:
  std::size_t in_ch_ = 0, out_ch_ = 0;
  Int3 k_{}, s_{}, p_{};
  Tensor<T> input_;
};

/// Per-channel normalization over (N, D, H, W) with running statistics for
/// eval mode. Statistics are accumulated in double.
template <typename T>
class BatchNorm3d {
 public:
  BatchNorm3d() = default;
  BatchNorm3d(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : gamma(name + ".weight", {channels}), beta(name + ".bias", {channels}),
        running_mean(name + ".running_mean", {channels}, T(0)), running_var(name + ".running_var", {channels}, T(1)),
        momentum_(momentum), eps_(eps) {
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
  }

  Param<T> gamma, beta;
  Buffer<T> running_mean, running_var;

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    require_rank5(x.shape(), "BatchNorm3d");
    const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3) * x.dim(4);
    if (C != gamma.size()) fail(ErrorKind::shape, gamma.name + ": channel mismatch");
    Tensor<T> y(x.shape());
    const bool train = ctx.mode == Mode::train;
    if (train && N * S < 2) fail(ErrorKind::shape, gamma.name + ": need more than one value per channel to train");
    if (ctx.record && train) {
      xhat_ = Tensor<T>(x.shape());
      invstd_.assign(C, 0.0);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (train) {
        double sum = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) sum += p[i];
        }
        mean = sum / static_cast<double>(N * S);
        double sq = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            const double d = p[i] - mean;
            sq += d * d;
          }
        }
        const double M = static_cast<double>(N * S);
        var = sq / M;
        running_mean.value[c] = static_cast<T>((1 - momentum_) * running_mean.value[c] + momentum_ * mean);
        running_var.value[c] = static_cast<T>((1 - momentum_) * running_var.value[c] + momentum_ * sq / (M - 1));
      } else {
        mean = running_mean.value[c];
        var = running_var.value[c];
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      const T scale = static_cast<T>(gamma.value[c] * inv);
      const T shift = static_cast<T>(beta.value[c] - gamma.value[c] * inv * mean);
      const T tm = static_cast<T>(mean), ti = static_cast<T>(inv);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * S;
        T* q = y.data() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) q[i] = scale * p[i] + shift;
        if (ctx.record && train) {
          T* h = xhat_.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) h[i] = (p[i] - tm) * ti;
        }
      }
      if (ctx.record && train) invstd_[c] = inv;
    }
    if (ctx.record && !train) {
      // eval-mode backward is a per-channel scale
      invstd_.assign(C, 0.0);
      xhat_ = x;
      for (std::size_t c = 0; c < C; ++c) {
        invstd_[c] = 1.0 / std::sqrt(static_cast<double>(running_var.value[c]) + eps_);
        for (std::size_t n = 0; n < N; ++n) {
          T* h = xhat_.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) h[i] = static_cast<T>((h[i] - running_mean.value[c]) * invstd_[c]);
        }
      }
    }
    recorded_train_ = train;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (xhat_.empty()) fail(ErrorKind::state, gamma.name + ": backward without a recorded forward");
    const std::size_t N = gy.dim(0), C = gy.dim(1), S = gy.dim(2) * gy.dim(3) * gy.dim(4);
    const double M = static_cast<double>(N * S);
    Tensor<T> gx(gy.shape());
    for (std::size_t c = 0; c < C; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* g = gy.data() + (n * C + c) * S;
        const T* h = xhat_.data() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          sum_g += g[i];
          sum_gx += static_cast<double>(g[i]) * h[i];
        }
      }
      gamma.grad[c] += static_cast<T>(sum_gx);
      beta.grad[c] += static_cast<T>(sum_g);
      const double k = gamma.value[c] * invstd_[c];
      for (std::size_t n = 0; n < N; ++n) {
        const T* g = gy.data() + (n * C + c) * S;
        const T* h = xhat_.data() + (n * C + c) * S;
        T* q = gx.data() + (n * C + c) * S;
        if (recorded_train_) {
          const T a = static_cast<T>(k), b = static_cast<T>(k * sum_g / M), d = static_cast<T>(k * sum_gx / M);
          for (std::size_t i = 0; i < S; ++i) q[i] = a * g[i] - b - d * h[i];
        } else {
          const T a = static_cast<T>(k);
          for (std::size_t i = 0; i < S; ++i) q[i] = a * g[i];
        }
      }
    }
    xhat_ = Tensor<T>();
    return gx;
  }

  void clear_cache() { xhat_ = Tensor<T>(); }

 private:
  double momentum_ = 0.1, eps_ = 1e-5;
  Tensor<T> xhat_;
  std::vector<double> invstd_;
  bool recorded_train_ = false;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(Tensor<T> x, const ForwardContext& ctx) {
    for (auto& v : x.values()) v = v > T(0) ? v : T(0);
    if (ctx.record) output_ = x;
    return x;
  }

  Tensor<T> backward(Tensor<T> gy) {
    if (output_.empty()) fail(ErrorKind::state, "ReLU: backward without a recorded forward");
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (!(output_[i] > T(0))) gy[i] = T(0);
    output_ = Tensor<T>();
    return gy;
  }

  void clear_cache() { output_ = Tensor<T>(); }

 private:
  Tensor<T> output_;
};

/// Inverted dropout; identity in eval mode or when p = 0.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double p = 0.0) : p_(p) {}

  double probability() const { return p_; }

  Tensor<T> forward(Tensor<T> x, const ForwardContext& ctx) {
    active_ = ctx.mode == Mode::train && p_ > 0.0;
    if (!active_) return x;
    if (!ctx.rng) fail(ErrorKind::state, "Dropout: train mode requires an RNG");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
    std::vector<T> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = uniform01(*ctx.rng) >= p_ ? keep_scale : T(0);
      x[i] *= mask[i];
    }
    if (ctx.record) mask_ = std::move(mask);
    return x;
  }

  Tensor<T> backward(Tensor<T> gy) {
    if (!active_) return gy;
    if (mask_.size() != gy.size()) fail(ErrorKind::state, "Dropout: backward without a recorded forward");
    for (std::size_t i = 0; i < gy.size(); ++i) gy[i] *= mask_[i];
    mask_.clear();
    return gy;
  }

  void clear_cache() { mask_.clear(); }

 private:
  double p_ = 0.0;
  bool active_ = false;
  std::vector<T> mask_;
};

/// (N, C, D, H, W) -> (N, C) mean over the spatial axes.
template <typename T>
class GlobalAvgPool3d {
 public:
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    require_rank5(x.shape(), "GlobalAvgPool3d");
    const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3) * x.dim(4);
    Tensor<T> y({N, C});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double s = 0;
      const T* p = x.data() + nc * S;
      for (std::size_t i = 0; i < S; ++i) s += p[i];
      y[nc] = static_cast<T>(s / static_cast<double>(S));
    }
    if (ctx.record) in_shape_ = x.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (in_shape_.empty()) fail(ErrorKind::state, "GlobalAvgPool3d: backward without a recorded forward");
    Tensor<T> gx(in_shape_);
    const std::size_t S = in_shape_[2] * in_shape_[3] * in_shape_[4];
    const double inv = 1.0 / static_cast<double>(S);
    for (std::size_t nc = 0; nc < gy.size(); ++nc) {
      const T v = static_cast<T>(gy[nc] * inv);
      std::fill(gx.data() + nc * S, gx.data() + (nc + 1) * S, v);
    }
    in_shape_.clear();
    return gx;
  }

  void clear_cache() { in_shape_.clear(); }

 private:
  Shape in_shape_;
};

/// y = x W^T + b with W (out, in).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out)
      : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

  Param<T> weight, bias;

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (auto& v : weight.value) v = static_cast<T>(uniform(rng, -bound, bound));
    for (auto& v : bias.value) v = static_cast<T>(uniform(rng, -bound, bound));
  }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    if (x.rank() != 2 || x.dim(1) != in_) fail(ErrorKind::shape, weight.name + ": bad input " + to_string(x.shape()));
    const std::size_t N = x.dim(0);
    Tensor<T> y({N, out_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < out_; ++o) {
        T s = bias.value[o];
        for (std::size_t i = 0; i < in_; ++i) s += weight.value[o * in_ + i] * x[n * in_ + i];
        y[n * out_ + o] = s;
      }
    if (ctx.record) input_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (input_.empty()) fail(ErrorKind::state, weight.name + ": backward without a recorded forward");
    const std::size_t N = input_.dim(0);
    Tensor<T> gx({N, in_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = gy[n * out_ + o];
        bias.grad[o] += g;
        for (std::size_t i = 0; i < in_; ++i) {
          weight.grad[o * in_ + i] += g * input_[n * in_ + i];
          gx[n * in_ + i] += g * weight.value[o * in_ + i];
        }
      }
    input_ = Tensor<T>();
    return gx;
  }

  void clear_cache() { input_ = Tensor<T>(); }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;
};

}  // namespace voxclass::nn
