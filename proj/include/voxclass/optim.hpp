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

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "voxclass/error.hpp"
#include "voxclass/nn/tensor.hpp"

namespace voxclass {

/// 1cycle constants: cosine warmup from max_lr/start_div to max_lr over the
/// first warmup_fraction of steps, then cosine annealing to max_lr/final_div.
/// Momentum runs the other way between momentum_max and momentum_min.
struct OneCycleParams {
  double warmup_fraction = 0.25;
  double start_div = 25.0;
  double final_div = 1e5;
  double momentum_max = 0.95;
  double momentum_min = 0.85;

  friend bool operator==(const OneCycleParams&, const OneCycleParams&) = default;
};

struct ScheduleState {
  std::size_t step = 0;
  std::size_t total_steps = 0;
  double lr = 0.0;
  double momentum = 0.0;
};

inline double cosine_anneal(double start, double end, double pct) {
  return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
}

inline ScheduleState one_cycle(std::size_t step, std::size_t total_steps, double max_lr,
                               const OneCycleParams& p = {}) {
  if (total_steps == 0) fail(ErrorKind::parameter, "one_cycle: total_steps must be > 0");
  if (step > total_steps) fail(ErrorKind::parameter, "one_cycle: step beyond total_steps");
  if (!(max_lr > 0)) fail(ErrorKind::parameter, "one_cycle: max_lr must be > 0");
  ScheduleState s{step, total_steps, 0.0, 0.0};
  const double t = static_cast<double>(step);
  const double peak = p.warmup_fraction * static_cast<double>(total_steps);
  if (t <= peak && peak > 0) {
    const double pct = t / peak;
    s.lr = cosine_anneal(max_lr / p.start_div, max_lr, pct);
    s.momentum = cosine_anneal(p.momentum_max, p.momentum_min, pct);
  } else {
    const double pct = (t - peak) / (static_cast<double>(total_steps) - peak);
    s.lr = cosine_anneal(max_lr, max_lr / p.final_div, pct);
    s.momentum = cosine_anneal(p.momentum_min, p.momentum_max, pct);
  }
  return s;
}

struct AdamParams {
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay and a per-step first-moment decay (the
/// scheduled momentum). Bias correction uses the product of the decays seen.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<nn::Param<T>*> params, AdamParams hp = {}) : params_(std::move(params)), hp_(hp) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(double lr, double beta1, double weight_decay) {
    for (auto* p : params_)
      for (auto g : p->grad)
        if (!std::isfinite(static_cast<double>(g)))
          fail(ErrorKind::numeric, "non-finite gradient in parameter '" + p->name + "'");
    ++t_;
    beta1_prod_ *= beta1;
    beta2_prod_ *= hp_.beta2;
    const double c1 = 1.0 - beta1_prod_;
    const double c2 = 1.0 - beta2_prod_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        double w = p.value[i];
        w -= lr * weight_decay * w;
        const double g = p.grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = hp_.beta2 * v[i] + (1.0 - hp_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w -= lr * mhat / (std::sqrt(vhat) + hp_.eps);
        p.value[i] = static_cast<T>(w);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<nn::Param<T>*> params_;
  AdamParams hp_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
  double beta1_prod_ = 1.0, beta2_prod_ = 1.0;
};

}  // namespace voxclass
