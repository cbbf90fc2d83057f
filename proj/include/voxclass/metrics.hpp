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

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxclass/dataset.hpp"
#include "voxclass/error.hpp"

namespace voxclass {

/// Rows are truth, columns predictions, both indexed by position in `classes`.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<int> classes)
      : classes_(std::move(classes)), counts_(classes_.size() * classes_.size(), 0) {}

  const std::vector<int>& classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }

  void add(int truth, int predicted) {
    ++counts_[index_of(truth) * size() + index_of(predicted)];
    ++total_;
  }

  std::size_t count(std::size_t truth_idx, std::size_t pred_idx) const { return counts_[truth_idx * size() + pred_idx]; }
  std::size_t total() const { return total_; }

  std::size_t true_positives(std::size_t k) const { return count(k, k); }
  std::size_t false_positives(std::size_t k) const {
    std::size_t s = 0;
    for (std::size_t t = 0; t < size(); ++t)
      if (t != k) s += count(t, k);
    return s;
  }
  std::size_t false_negatives(std::size_t k) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < size(); ++p)
      if (p != k) s += count(k, p);
    return s;
  }

 private:
  std::size_t index_of(int label) const {
    auto it = std::find(classes_.begin(), classes_.end(), label);
    if (it == classes_.end()) fail(ErrorKind::evaluation, "label " + std::to_string(label) + " is not in the class set");
    return static_cast<std::size_t>(it - classes_.begin());
  }

  std::vector<int> classes_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
};

struct ClassScore {
  int label = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Per-class scores with 0 for any undefined ratio.
inline std::vector<ClassScore> class_scores(const ConfusionMatrix& m) {
  std::vector<ClassScore> out;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double tp = static_cast<double>(m.true_positives(k));
    const double fp = static_cast<double>(m.false_positives(k));
    const double fn = static_cast<double>(m.false_negatives(k));
    ClassScore s;
    s.label = m.classes()[k];
    s.support = m.true_positives(k) + m.false_negatives(k);
    s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    out.push_back(s);
  }
  return out;
}

inline double mean_f1(const std::vector<ClassScore>& scores) {
  double s = 0;
  for (const auto& c : scores) s += c.f1;
  return scores.empty() ? 0.0 : s / static_cast<double>(scores.size());
}

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 const std::vector<int>& classes) {
  if (truth.size() != predicted.size()) fail(ErrorKind::evaluation, "truth and prediction lengths differ");
  if (truth.empty()) fail(ErrorKind::evaluation, "no items to evaluate");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

/// Unweighted mean of per-class F1 over the declared class set.
inline double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted,
                       const std::vector<int>& classes) {
  return mean_f1(class_scores(confusion(truth, predicted, classes)));
}

enum class Task { presence, severity };

constexpr std::string_view to_string(Task t) { return t == Task::presence ? "presence" : "severity"; }

struct EvalReport {
  Task task = Task::presence;
  double macro_f1 = 0.0;
  std::vector<ClassScore> per_class;
  std::size_t n_items = 0;
};

inline EvalReport make_report(Task task, const std::vector<int>& truth, const std::vector<int>& predicted,
                              const std::vector<int>& classes) {
  EvalReport r;
  r.task = task;
  r.per_class = class_scores(confusion(truth, predicted, classes));
  r.macro_f1 = mean_f1(r.per_class);
  r.n_items = truth.size();
  return r;
}

/// Label decisions for one scan, keyed by scan id in the maps below.
struct LabelDecision {
  bool covid = false;
  int severity = 1;
};

namespace detail {

[[noreturn]] inline void coverage_failure(const std::vector<std::string>& missing) {
  std::string msg = std::to_string(missing.size()) + " scan(s) lack predictions:";
  for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
  if (missing.size() > 20) msg += " ...";
  fail(ErrorKind::coverage, msg);
}

}  // namespace detail

/// Task 1: all covid-labeled scans of the partition, classes {0 negative, 1 positive}.
inline EvalReport evaluate_task1(const AnnotationSet& truth, const std::map<std::string, LabelDecision>& predictions,
                                 Partition partition = Partition::validation) {
  std::vector<int> t, p;
  std::vector<std::string> missing;
  for (const auto& r : truth.records()) {
    if (r.partition != partition || !r.covid_label) continue;
    auto it = predictions.find(r.scan_id);
    if (it == predictions.end()) {
      missing.push_back(r.scan_id);
      continue;
    }
    t.push_back(*r.covid_label ? 1 : 0);
    p.push_back(it->second.covid ? 1 : 0);
  }
  if (!missing.empty()) detail::coverage_failure(missing);
  return make_report(Task::presence, t, p, {1, 0});
}

/// Task 2: only scans annotated with a severity 1..4 enter, classes {1,2,3,4}.
inline EvalReport evaluate_task2(const AnnotationSet& truth, const std::map<std::string, LabelDecision>& predictions,
                                 Partition partition = Partition::validation) {
  std::vector<int> t, p;
  std::vector<std::string> missing;
  for (const auto& r : truth.records()) {
    if (r.partition != partition || !r.severity) continue;
    auto it = predictions.find(r.scan_id);
    if (it == predictions.end()) {
      missing.push_back(r.scan_id);
      continue;
    }
    t.push_back(*r.severity);
    p.push_back(it->second.severity);
  }
  if (!missing.empty()) detail::coverage_failure(missing);
  return make_report(Task::severity, t, p, {1, 2, 3, 4});
}

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string format_report_table(const EvalReport& r) {
  std::string out = "task: " + std::string(to_string(r.task)) + "\n";
  out += "items: " + std::to_string(r.n_items) + "\n";
  out += "class    precision  recall     f1         support\n";
  for (const auto& c : r.per_class) {
    char line[128];
    std::snprintf(line, sizeof line, "%-8d %-10.6f %-10.6f %-10.6f %zu\n", c.label, c.precision, c.recall, c.f1,
                  c.support);
    out += line;
  }
  out += "macro_f1: " + fmt6(r.macro_f1) + "\n";
  return out;
}

inline std::string format_report_kv(const EvalReport& r) {
  std::string out = "task=" + std::string(to_string(r.task)) + "\n";
  out += "n_items=" + std::to_string(r.n_items) + "\n";
  out += "macro_f1=" + fmt6(r.macro_f1) + "\n";
  for (const auto& c : r.per_class) {
    const auto k = "class_" + std::to_string(c.label);
    out += k + ".precision=" + fmt6(c.precision) + "\n";
    out += k + ".recall=" + fmt6(c.recall) + "\n";
    out += k + ".f1=" + fmt6(c.f1) + "\n";
    out += k + ".support=" + std::to_string(c.support) + "\n";
  }
  return out;
}

}  // namespace voxclass
