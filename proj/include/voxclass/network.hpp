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

// 3D residual classifier: stem convolution, four stages of basic residual
// blocks (each followed by dropout), global average pooling, and a head of
// two linear layers with ReLU and dropout between them.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxclass/error.hpp"
#include "voxclass/nn/layers.hpp"
#include "voxclass/nn/tensor.hpp"
#include "voxclass/random.hpp"
#include "voxclass/volume.hpp"

namespace voxclass {

enum class HeadMode { covid_only, severity_only, dual };

constexpr std::string_view to_string(HeadMode m) {
  switch (m) {
    case HeadMode::covid_only: return "covid_only";
    case HeadMode::severity_only: return "severity_only";
    case HeadMode::dual: return "dual";
  }
  return "";
}

inline std::optional<HeadMode> parse_head_mode(std::string_view s) {
  for (auto m : {HeadMode::covid_only, HeadMode::severity_only, HeadMode::dual})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

constexpr bool has_covid_head(HeadMode m) { return m != HeadMode::severity_only; }
constexpr bool has_severity_head(HeadMode m) { return m != HeadMode::covid_only; }

/// Output units: the covid logit first (when present), then five severity logits.
constexpr std::size_t head_units(HeadMode m) {
  return (has_covid_head(m) ? 1 : 0) + (has_severity_head(m) ? 5 : 0);
}

inline constexpr std::size_t kSeverityClasses = 5;

struct NetworkConfig {
  std::array<std::size_t, 4> stage_widths{64, 128, 256, 512};
  std::array<std::size_t, 4> blocks_per_stage{2, 2, 2, 2};
  std::array<double, 4> stage_dropout{0.1, 0.1, 0.1, 0.1};
  std::size_t head_hidden = 512;
  double head_dropout = 0.5;
  HeadMode head_mode = HeadMode::dual;
  Dims3 input_dims = preset_dims(SizePreset::small);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

namespace detail {

inline std::size_t conv_out(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
  return (n + 2 * p - k) / s + 1;
}

}  // namespace detail

/// Spatial dims after the stem and each stage; throws when any strided step
/// would receive an extent below 2.
inline std::array<Dims3, 5> feature_dims(const NetworkConfig& cfg) {
  const Dims3 in = cfg.input_dims;
  if (in.depth < 1 || in.height < 7 || in.width < 7)
    fail(ErrorKind::configuration, "input dims " + to_string(in) + " too small for the stem");
  std::array<Dims3, 5> out;
  out[0] = {detail::conv_out(in.depth, 3, 1, 1), detail::conv_out(in.height, 7, 2, 3),
            detail::conv_out(in.width, 7, 2, 3)};
  for (int s = 1; s < 4; ++s) {
    const Dims3 p = out[s - 1];
    out[s] = p;
    if (p.depth < 2 || p.height < 2 || p.width < 2)
      fail(ErrorKind::configuration, "input dims " + to_string(in) + " too small for the downsampling ladder (stage " +
                                         std::to_string(s + 1) + " receives " + to_string(p) + ")");
    out[s] = {detail::conv_out(p.depth, 3, 2, 1), detail::conv_out(p.height, 3, 2, 1),
              detail::conv_out(p.width, 3, 2, 1)};
  }
  out[4] = out[3];
  return out;
}

inline void validate(const NetworkConfig& cfg) {
  for (auto w : cfg.stage_widths)
    if (w < 1) fail(ErrorKind::configuration, "stage_widths must be >= 1");
  for (auto b : cfg.blocks_per_stage)
    if (b < 1) fail(ErrorKind::configuration, "blocks_per_stage must be >= 1");
  for (auto p : cfg.stage_dropout)
    if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::configuration, "stage_dropout must be in [0,1)");
  if (!(cfg.head_dropout >= 0.0 && cfg.head_dropout < 1.0))
    fail(ErrorKind::configuration, "head_dropout must be in [0,1)");
  if (cfg.head_hidden < 1) fail(ErrorKind::configuration, "head_hidden must be >= 1");
  feature_dims(cfg);
}

/// Per-item head outputs. `x` holds the covid logit, `z` the five severity
/// logits (class 0 = negative, 1..4 = severity).
struct HeadOutputs {
  std::size_t batch = 0;
  std::optional<std::vector<double>> x;
  std::optional<std::vector<std::array<double, kSeverityClasses>>> z;

  friend bool operator==(const HeadOutputs&, const HeadOutputs&) = default;
};

/// Gradients of the loss with respect to the head outputs, same layout.
using HeadGradients = HeadOutputs;

/// Conv filter bank (O, C, kD, kH, kW).
using WeightTensor = nn::Tensor<float>;

/// Folds a 3-channel first-layer filter bank into a 1-channel one by summing
/// over the channel axis. A grayscale input replicated to three channels
/// gives the same response under either bank.
inline WeightTensor adapt_first_conv(const WeightTensor& w) {
  if (w.rank() != 5 || w.dim(1) != 3)
    fail(ErrorKind::shape, "adapt_first_conv expects (O,3,kD,kH,kW) weights, got " + nn::to_string(w.shape()));
  const std::size_t O = w.dim(0), K = w.dim(2) * w.dim(3) * w.dim(4);
  WeightTensor out({O, 1, w.dim(2), w.dim(3), w.dim(4)});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t k = 0; k < K; ++k)
      out[o * K + k] = w[(o * 3 + 0) * K + k] + w[(o * 3 + 1) * K + k] + w[(o * 3 + 2) * K + k];
  return out;
}

template <typename T>
class BasicBlock {
 public:
  BasicBlock(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t stride)
      : conv1_(name + ".conv1", in_ch, out_ch, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1}),
        bn1_(name + ".bn1", out_ch),
        conv2_(name + ".conv2", out_ch, out_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}),
        bn2_(name + ".bn2", out_ch) {
    if (stride != 1 || in_ch != out_ch) {
      down_conv_.emplace(name + ".downsample.0", in_ch, out_ch, nn::Int3{1, 1, 1}, nn::Int3{stride, stride, stride},
                         nn::Int3{0, 0, 0});
      down_bn_.emplace(name + ".downsample.1", out_ch);
    }
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (down_conv_) down_conv_->init(rng);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, const nn::ForwardContext& ctx) {
    auto y = relu1_.forward(bn1_.forward(conv1_.forward(x, ctx), ctx), ctx);
    y = bn2_.forward(conv2_.forward(y, ctx), ctx);
    if (down_conv_) {
      auto s = down_bn_->forward(down_conv_->forward(x, ctx), ctx);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += s[i];
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    }
    return relu2_.forward(std::move(y), ctx);
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& gy) {
    auto g = relu2_.backward(gy);
    auto gx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    if (down_conv_) {
      auto gs = down_conv_->backward(down_bn_->backward(g));
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
    } else {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    return gx;
  }

  template <typename F>
  void visit(F&& f) {
    f(conv1_.weight);
    f(bn1_.gamma);
    f(bn1_.beta);
    f(conv2_.weight);
    f(bn2_.gamma);
    f(bn2_.beta);
    if (down_conv_) {
      f(down_conv_->weight);
      f(down_bn_->gamma);
      f(down_bn_->beta);
    }
  }

  template <typename F>
  void visit_buffers(F&& f) {
    f(bn1_.running_mean);
    f(bn1_.running_var);
    f(bn2_.running_mean);
    f(bn2_.running_var);
    if (down_bn_) {
      f(down_bn_->running_mean);
      f(down_bn_->running_var);
    }
  }

  void clear_cache() {
    conv1_.clear_cache();
    bn1_.clear_cache();
    relu1_.clear_cache();
    conv2_.clear_cache();
    bn2_.clear_cache();
    relu2_.clear_cache();
    if (down_conv_) {
      down_conv_->clear_cache();
      down_bn_->clear_cache();
    }
  }

 private:
  nn::Conv3d<T> conv1_;
  nn::BatchNorm3d<T> bn1_;
  nn::ReLU<T> relu1_;
  nn::Conv3d<T> conv2_;
  nn::BatchNorm3d<T> bn2_;
  nn::ReLU<T> relu2_;
  std::optional<nn::Conv3d<T>> down_conv_;
  std::optional<nn::BatchNorm3d<T>> down_bn_;
};

template <typename T>
class Network {
 public:
  /// Deterministic initialization for a fixed seed.
  Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    validate(cfg_);
    const auto& w = cfg_.stage_widths;
    stem_conv_ = nn::Conv3d<T>("stem.0", 1, w[0], {3, 7, 7}, {1, 2, 2}, {1, 3, 3});
    stem_bn_ = nn::BatchNorm3d<T>("stem.1", w[0]);
    std::size_t in_ch = w[0];
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        stages_[s].emplace_back("layer" + std::to_string(s + 1) + "." + std::to_string(b), in_ch, w[s], stride);
        in_ch = w[s];
      }
      stage_dropout_[s] = nn::Dropout<T>(cfg_.stage_dropout[s]);
    }
    fc1_ = nn::Linear<T>("fc.0", w[3], cfg_.head_hidden);
    head_dropout_ = nn::Dropout<T>(cfg_.head_dropout);
    fc2_ = nn::Linear<T>("fc.3", cfg_.head_hidden, head_units(cfg_.head_mode));

    Rng rng(seed);
    stem_conv_.init(rng);
    for (auto& stage : stages_)
      for (auto& block : stage) block.init(rng);
    fc1_.init(rng);
    fc2_.init(rng);
  }

  const NetworkConfig& config() const { return cfg_; }

  /// Runs the network on an (N, 1, D, H, W) batch. Caches for backward are
  /// kept when ctx.record is set.
  HeadOutputs forward(const nn::Tensor<T>& batch, const nn::ForwardContext& ctx) {
    nn::require_rank5(batch.shape(), "Network");
    const Dims3 d = cfg_.input_dims;
    if (batch.dim(1) != 1 || batch.dim(2) != d.depth || batch.dim(3) != d.height || batch.dim(4) != d.width)
      fail(ErrorKind::shape, "network expects (N,1," + std::to_string(d.depth) + "," + std::to_string(d.height) + "," +
                                 std::to_string(d.width) + ") input, got " + nn::to_string(batch.shape()));
    if (batch.dim(0) < 1) fail(ErrorKind::shape, "empty batch");
    recorded_ = false;
    auto x = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(batch, ctx), ctx), ctx);
    for (std::size_t s = 0; s < 4; ++s) {
      for (auto& block : stages_[s]) x = block.forward(x, ctx);
      x = stage_dropout_[s].forward(std::move(x), ctx);
    }
    auto f = pool_.forward(x, ctx);
    auto h = head_dropout_.forward(head_relu_.forward(fc1_.forward(f, ctx), ctx), ctx);
    auto out = fc2_.forward(h, ctx);
    recorded_ = ctx.record;
    return unpack(out);
  }

  /// Eval-mode forward without caches.
  HeadOutputs predict(const nn::Tensor<T>& batch) { return forward(batch, {nn::Mode::eval, nullptr, false}); }

  /// Accumulates parameter gradients for the last recorded forward.
  void backward(const HeadGradients& g) {
    if (!recorded_) fail(ErrorKind::state, "backward called without a recorded forward pass");
    recorded_ = false;
    const std::size_t units = head_units(cfg_.head_mode);
    nn::Tensor<T> gout({g.batch, units});
    for (std::size_t n = 0; n < g.batch; ++n) {
      std::size_t u = 0;
      if (has_covid_head(cfg_.head_mode)) {
        if (!g.x || g.x->size() != g.batch) fail(ErrorKind::shape, "missing covid-logit gradient");
        gout[n * units + u++] = static_cast<T>((*g.x)[n]);
      }
      if (has_severity_head(cfg_.head_mode)) {
        if (!g.z || g.z->size() != g.batch) fail(ErrorKind::shape, "missing severity-logit gradient");
        for (std::size_t c = 0; c < kSeverityClasses; ++c) gout[n * units + u++] = static_cast<T>((*g.z)[n][c]);
      }
    }
    auto gh = fc1_.backward(head_relu_.backward(head_dropout_.backward(fc2_.backward(gout))));
    auto gx = pool_.backward(gh);
    for (std::size_t s = 4; s-- > 0;) {
      gx = stage_dropout_[s].backward(std::move(gx));
      for (std::size_t b = stages_[s].size(); b-- > 0;) gx = stages_[s][b].backward(gx);
    }
    stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(std::move(gx))), false);
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Trainable parameters in a fixed order.
  std::vector<nn::Param<T>*> parameters() {
    std::vector<nn::Param<T>*> out;
    auto add = [&](nn::Param<T>& p) { out.push_back(&p); };
    add(stem_conv_.weight);
    add(stem_bn_.gamma);
    add(stem_bn_.beta);
    for (auto& stage : stages_)
      for (auto& block : stage) block.visit(add);
    add(fc1_.weight);
    add(fc1_.bias);
    add(fc2_.weight);
    add(fc2_.bias);
    return out;
  }

  std::vector<nn::Buffer<T>*> buffers() {
    std::vector<nn::Buffer<T>*> out;
    auto add = [&](nn::Buffer<T>& b) { out.push_back(&b); };
    add(stem_bn_.running_mean);
    add(stem_bn_.running_var);
    for (auto& stage : stages_)
      for (auto& block : stage) block.visit_buffers(add);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }

  /// Installs first-layer filters; 3-channel banks are folded to one channel.
  void load_stem_weights(const WeightTensor& w) {
    const WeightTensor folded = w.rank() == 5 && w.dim(1) == 3 ? adapt_first_conv(w) : w;
    if (folded.shape() != stem_conv_.weight.shape)
      fail(ErrorKind::shape, "stem weights " + nn::to_string(folded.shape()) + " do not match " +
                                 nn::to_string(stem_conv_.weight.shape));
    for (std::size_t i = 0; i < folded.size(); ++i) stem_conv_.weight.value[i] = static_cast<T>(folded[i]);
  }

  void clear_cache() {
    stem_conv_.clear_cache();
    stem_bn_.clear_cache();
    stem_relu_.clear_cache();
    for (auto& stage : stages_)
      for (auto& block : stage) block.clear_cache();
    for (auto& d : stage_dropout_) d.clear_cache();
    pool_.clear_cache();
    fc1_.clear_cache();
    head_relu_.clear_cache();
    head_dropout_.clear_cache();
    fc2_.clear_cache();
    recorded_ = false;
  }

 private:
  HeadOutputs unpack(const nn::Tensor<T>& out) const {
    HeadOutputs h;
    h.batch = out.dim(0);
    const std::size_t units = out.dim(1);
    if (has_covid_head(cfg_.head_mode)) h.x.emplace(h.batch);
    if (has_severity_head(cfg_.head_mode)) h.z.emplace(h.batch);
    for (std::size_t n = 0; n < h.batch; ++n) {
      std::size_t u = 0;
      if (h.x) (*h.x)[n] = static_cast<double>(out[n * units + u++]);
      if (h.z)
        for (std::size_t c = 0; c < kSeverityClasses; ++c) (*h.z)[n][c] = static_cast<double>(out[n * units + u++]);
    }
    return h;
  }

  NetworkConfig cfg_;
  nn::Conv3d<T> stem_conv_;
  nn::BatchNorm3d<T> stem_bn_;
  nn::ReLU<T> stem_relu_;
  std::array<std::vector<BasicBlock<T>>, 4> stages_;
  std::array<nn::Dropout<T>, 4> stage_dropout_;
  nn::GlobalAvgPool3d<T> pool_;
  nn::Linear<T> fc1_;
  nn::ReLU<T> head_relu_;
  nn::Dropout<T> head_dropout_;
  nn::Linear<T> fc2_;
  bool recorded_ = false;
};

/// Stacks volumes into an (N, 1, D, H, W) batch.
template <typename T>
nn::Tensor<T> make_batch(std::span<const Volume* const> volumes) {
  if (volumes.empty()) fail(ErrorKind::shape, "empty batch");
  const Dims3 d = volumes.front()->dims;
  nn::Tensor<T> t({volumes.size(), 1, d.depth, d.height, d.width});
  for (std::size_t n = 0; n < volumes.size(); ++n) {
    if (volumes[n]->dims != d) fail(ErrorKind::shape, "batch volumes have different dims");
    std::copy(volumes[n]->data.begin(), volumes[n]->data.end(), t.data() + n * d.voxel_count());
  }
  return t;
}

template <typename T>
nn::Tensor<T> make_batch(const Volume& v) {
  const Volume* p = &v;
  return make_batch<T>(std::span<const Volume* const>(&p, 1));
}

}  // namespace voxclass
