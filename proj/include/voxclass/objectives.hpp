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

// Dual-task losses: weighted binary cross entropy on the covid logit, and a
// five-way severity cross entropy where class 0 is "negative" and positives
// of unknown severity are scored on the mass of classes 1..4.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "voxclass/dataset.hpp"
#include "voxclass/error.hpp"
#include "voxclass/network.hpp"

namespace voxclass {

using SeverityVector = std::array<double, kSeverityClasses>;

inline constexpr double kLogClamp = 1e-12;

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline SeverityVector softmax(const SeverityVector& z) {
  const double m = *std::max_element(z.begin(), z.end());
  SeverityVector s;
  double sum = 0;
  for (std::size_t c = 0; c < s.size(); ++c) sum += (s[c] = std::exp(z[c] - m));
  for (auto& v : s) v /= sum;
  return s;
}

struct LossValue {
  double value = 0.0;
  double dlogit = 0.0;  // d value / d x
};

struct SeverityLossValue {
  double value = 0.0;
  SeverityVector dlogits{};  // d value / d z
};

/// -w (y log p + (1-y) log(1-p)); gradient w.r.t. the logit is w (p - y).
inline LossValue covid_loss(double p, double y, double w) {
  const double lp = std::log(std::max(p, kLogClamp));
  const double lq = std::log(std::max(1.0 - p, kLogClamp));
  return {-w * (y * lp + (1.0 - y) * lq), w * (p - y)};
}

inline double smooth_binary_target(bool positive, double eps_p) { return positive ? 1.0 - eps_p : eps_p; }

/// One-hot on `cls` softened by moving eps_s to its neighbours on the chain
/// 0-1-2-3-4, split equally; the ends have a single neighbour.
inline SeverityVector smooth_severity_target(int cls, double eps_s) {
  if (cls < 0 || cls > 4) fail(ErrorKind::parameter, "severity class must be in 0..4");
  SeverityVector y{};
  y[cls] = 1.0 - eps_s;
  const bool left = cls > 0, right = cls < 4;
  const double share = eps_s / ((left ? 1 : 0) + (right ? 1 : 0));
  if (left) y[cls - 1] += share;
  if (right) y[cls + 1] += share;
  return y;
}

/// -w sum_c y_c log s_c; gradient w.r.t. the logits is w (s - y).
inline SeverityLossValue severity_loss_labeled(const SeverityVector& s, const SeverityVector& y, double w) {
  SeverityLossValue out;
  const double ysum = std::accumulate(y.begin(), y.end(), 0.0);
  for (std::size_t c = 0; c < s.size(); ++c) {
    if (y[c] != 0.0) out.value -= w * y[c] * std::log(std::max(s[c], kLogClamp));
    out.dlogits[c] = w * (s[c] * ysum - y[c]);
  }
  return out;
}

/// -w log(sum_{c=1..4} s_c).
inline SeverityLossValue severity_loss_unlabeled(const SeverityVector& s, double w) {
  SeverityLossValue out;
  const double pos = s[1] + s[2] + s[3] + s[4];
  const double clamped = std::max(pos, kLogClamp);
  out.value = -w * std::log(clamped);
  // d/dz_c of -log(P) with P = 1 - s_0: s_c - [c>=1] s_c / P
  // (zero once the clamp is active)
  if (pos > kLogClamp) {
    out.dlogits[0] = w * s[0];
    for (std::size_t c = 1; c < s.size(); ++c) out.dlogits[c] = w * (s[c] - s[c] / pos);
  }
  return out;
}

enum class SeverityKind { labeled, unlabeled_positive };

struct SeverityTarget {
  SeverityKind kind = SeverityKind::labeled;
  SeverityVector y{};  // used when labeled
  double w = 1.0;
};

struct CovidTarget {
  double y = 0.0;
  double w = 1.0;
};

/// Targets for one item. Either part may be absent (test scans, or the part
/// is not trained under the current lambda).
struct ItemTarget {
  std::optional<CovidTarget> covid;
  std::optional<SeverityTarget> severity;
};

struct SmoothingParams {
  double eps_p = 0.0;
  double eps_s = 0.0;
};

/// Inverse-frequency weight as an exact ratio N_total / (G n_g).
struct GroupWeight {
  std::int64_t numerator = 1;
  std::int64_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  friend bool operator==(const GroupWeight&, const GroupWeight&) = default;
};

/// Weights balancing the weighted counts of the given groups. Every group
/// passed in must be non-empty.
inline std::vector<GroupWeight> class_weights(const std::vector<std::size_t>& counts) {
  if (counts.empty()) fail(ErrorKind::configuration, "class_weights needs at least one group");
  std::int64_t total = 0;
  for (auto n : counts) {
    if (n == 0) fail(ErrorKind::configuration, "class_weights: a weighting group has zero items");
    total += static_cast<std::int64_t>(n);
  }
  const auto G = static_cast<std::int64_t>(counts.size());
  std::vector<GroupWeight> out;
  for (auto n : counts) {
    std::int64_t num = total, den = G * static_cast<std::int64_t>(n);
    const std::int64_t g = std::gcd(num, den);
    out.push_back({num / g, den / g});
  }
  return out;
}

/// Weighting groups for the two losses and their weights.
struct LossWeights {
  double covid_positive = 1.0;
  double covid_negative = 1.0;
  // severity classes 0..4, then positives of unknown severity
  std::array<double, 6> severity{1, 1, 1, 1, 1, 1};
};

/// Builds inverse-frequency weights from training records. Groups absent
/// from the records are left out of the normalization (and keep weight 1).
inline LossWeights loss_weights_from_records(const std::vector<ScanRecord>& train) {
  LossWeights lw;
  std::size_t pos = 0, neg = 0;
  std::array<std::size_t, 6> sev{};
  for (const auto& r : train) {
    if (!r.covid_label) continue;
    (*r.covid_label ? pos : neg)++;
    if (auto c = r.severity_class())
      ++sev[static_cast<std::size_t>(*c)];
    else
      ++sev[5];
  }
  std::vector<std::size_t> cov_counts, sev_counts;
  std::vector<int> cov_ids, sev_ids;
  if (pos) cov_counts.push_back(pos), cov_ids.push_back(1);
  if (neg) cov_counts.push_back(neg), cov_ids.push_back(0);
  for (int g = 0; g < 6; ++g)
    if (sev[g]) sev_counts.push_back(sev[g]), sev_ids.push_back(g);
  if (!cov_counts.empty()) {
    auto w = class_weights(cov_counts);
    for (std::size_t i = 0; i < w.size(); ++i) (cov_ids[i] ? lw.covid_positive : lw.covid_negative) = w[i].value();
  }
  if (!sev_counts.empty()) {
    auto w = class_weights(sev_counts);
    for (std::size_t i = 0; i < w.size(); ++i) lw.severity[sev_ids[i]] = w[i].value();
  }
  return lw;
}

struct LossConfig {
  double lambda = 0.5;
  SmoothingParams smoothing;
  bool class_weighting = true;
};

inline void validate(const LossConfig& c) {
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) fail(ErrorKind::configuration, "lambda must be in [0,1]");
  if (!(c.smoothing.eps_p >= 0.0 && c.smoothing.eps_p < 0.5)) fail(ErrorKind::configuration, "eps_p must be in [0,0.5)");
  if (!(c.smoothing.eps_s >= 0.0 && c.smoothing.eps_s < 0.5)) fail(ErrorKind::configuration, "eps_s must be in [0,0.5)");
}

/// Head layout implied by lambda: pure covid at 0, pure severity at 1.
inline HeadMode head_mode_for_lambda(double lambda) {
  if (lambda == 0.0) return HeadMode::covid_only;
  if (lambda == 1.0) return HeadMode::severity_only;
  return HeadMode::dual;
}

/// Targets for a labeled record under the given smoothing/weights.
inline ItemTarget make_item_target(const ScanRecord& r, const LossConfig& cfg, const LossWeights& lw) {
  ItemTarget t;
  if (!r.covid_label) return t;
  const bool pos = *r.covid_label;
  const double wp = cfg.class_weighting ? (pos ? lw.covid_positive : lw.covid_negative) : 1.0;
  t.covid = CovidTarget{smooth_binary_target(pos, cfg.smoothing.eps_p), wp};
  SeverityTarget st;
  if (auto c = r.severity_class()) {
    st.kind = SeverityKind::labeled;
    st.y = smooth_severity_target(*c, cfg.smoothing.eps_s);
    st.w = cfg.class_weighting ? lw.severity[static_cast<std::size_t>(*c)] : 1.0;
  } else {
    st.kind = SeverityKind::unlabeled_positive;
    st.w = cfg.class_weighting ? lw.severity[5] : 1.0;
  }
  t.severity = st;
  return t;
}

/// Per-item logits and derived probabilities.
struct Prediction {
  std::optional<double> x;
  std::optional<double> p;
  std::optional<SeverityVector> z;
  std::optional<SeverityVector> s;
  std::optional<double> p_covid_from_severity;
};

inline Prediction make_prediction(std::optional<double> x, std::optional<SeverityVector> z) {
  Prediction p;
  if (x) {
    p.x = x;
    p.p = sigmoid(*x);
  }
  if (z) {
    p.z = z;
    p.s = softmax(*z);
    p.p_covid_from_severity = (*p.s)[1] + (*p.s)[2] + (*p.s)[3] + (*p.s)[4];
  }
  return p;
}

inline Prediction prediction_at(const HeadOutputs& h, std::size_t i) {
  std::optional<double> x;
  std::optional<SeverityVector> z;
  if (h.x) x = (*h.x)[i];
  if (h.z) z = (*h.z)[i];
  return make_prediction(x, z);
}

struct CombinedLoss {
  double value = 0.0;
  double covid = 0.0;     // unweighted-by-lambda parts
  double severity = 0.0;
  std::optional<double> dx;
  std::optional<SeverityVector> dz;
};

inline SeverityLossValue severity_loss(const SeverityVector& s, const SeverityTarget& t) {
  return t.kind == SeverityKind::labeled ? severity_loss_labeled(s, t.y, t.w) : severity_loss_unlabeled(s, t.w);
}

/// (1 - lambda) covid + lambda severity. Terms with zero coefficient are not
/// evaluated, so their heads may be missing.
inline CombinedLoss combined_loss(const LossConfig& cfg, const Prediction& pred, const ItemTarget& target) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) fail(ErrorKind::configuration, "lambda must be in [0,1]");
  CombinedLoss out;
  const double a = 1.0 - cfg.lambda, b = cfg.lambda;
  if (a > 0.0 && target.covid) {
    if (!pred.p) fail(ErrorKind::configuration, "lambda < 1 requires a covid head");
    const auto l = covid_loss(*pred.p, target.covid->y, target.covid->w);
    out.covid = l.value;
    out.value += a * l.value;
    out.dx = a * l.dlogit;
  } else if (pred.x) {
    out.dx = 0.0;
  }
  if (b > 0.0 && target.severity) {
    if (!pred.s) fail(ErrorKind::configuration, "lambda > 0 requires a severity head");
    const auto l = severity_loss(*pred.s, *target.severity);
    out.severity = l.value;
    out.value += b * l.value;
    SeverityVector dz;
    for (std::size_t c = 0; c < dz.size(); ++c) dz[c] = b * l.dlogits[c];
    out.dz = dz;
  } else if (pred.z) {
    out.dz = SeverityVector{};
  }
  return out;
}

}  // namespace voxclass
