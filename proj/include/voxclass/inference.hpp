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
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxclass/binary_io.hpp"
#include "voxclass/dataset.hpp"
#include "voxclass/metrics.hpp"
#include "voxclass/network.hpp"
#include "voxclass/objectives.hpp"

namespace voxclass {

struct ScanPrediction {
  std::string scan_id;
  double p_covid = 0.0;
  SeverityVector severity_probs{};
  bool covid_label = false;
  int severity_label = 1;

  friend bool operator==(const ScanPrediction&, const ScanPrediction&) = default;
};

/// Positive only when strictly above one half.
constexpr bool covid_decision(double p) { return p > 0.5; }

/// Argmax over classes 1..4; class 0 is ignored and ties go to the lowest class.
inline int severity_decision(const SeverityVector& s) {
  int best = 1;
  for (int c = 2; c <= 4; ++c)
    if (s[c] > s[best]) best = c;
  return best;
}

inline void derive_labels(ScanPrediction& p) {
  p.covid_label = covid_decision(p.p_covid);
  p.severity_label = severity_decision(p.severity_probs);
}

/// Probabilities for one head output. A model without a severity head
/// spreads p_covid evenly over classes 1..4; a model without a covid head
/// reads p_covid as the severity mass of classes 1..4.
inline ScanPrediction prediction_from_head(const HeadOutputs& h, std::size_t i, std::string scan_id) {
  const auto pred = prediction_at(h, i);
  ScanPrediction out;
  out.scan_id = std::move(scan_id);
  if (pred.s) {
    out.severity_probs = *pred.s;
    out.p_covid = pred.p ? *pred.p : *pred.p_covid_from_severity;
  } else {
    out.p_covid = *pred.p;
    out.severity_probs = {1.0 - out.p_covid, out.p_covid / 4, out.p_covid / 4, out.p_covid / 4, out.p_covid / 4};
  }
  derive_labels(out);
  return out;
}

template <typename T>
ScanPrediction single_pass(Network<T>& net, const Volume& v, const std::string& scan_id) {
  return prediction_from_head(net.predict(make_batch<T>(v)), 0, scan_id);
}

/// Eval-mode prediction. With TTA the probabilities are the mean over the
/// identity and the sagittal reflection.
template <typename T>
ScanPrediction predict_volume(Network<T>& net, const PreprocessedVolume& vol, bool tta) {
  if (vol.voxels.dims != net.config().input_dims)
    fail(ErrorKind::shape, "volume '" + vol.scan_id + "' is " + to_string(vol.voxels.dims) + ", network expects " +
                               to_string(net.config().input_dims));
  auto a = single_pass(net, vol.voxels, vol.scan_id);
  if (!tta) return a;
  auto b = single_pass(net, reflect_sagittal(vol.voxels), vol.scan_id);
  ScanPrediction m;
  m.scan_id = vol.scan_id;
  m.p_covid = (a.p_covid + b.p_covid) / 2;
  for (std::size_t c = 0; c < kSeverityClasses; ++c) m.severity_probs[c] = (a.severity_probs[c] + b.severity_probs[c]) / 2;
  derive_labels(m);
  return m;
}

/// Arithmetic mean of member probabilities for one scan.
inline ScanPrediction ensemble(const std::vector<ScanPrediction>& members) {
  if (members.empty()) fail(ErrorKind::input, "ensemble needs at least one prediction");
  ScanPrediction out;
  out.scan_id = members.front().scan_id;
  for (const auto& m : members) {
    if (m.scan_id != out.scan_id)
      fail(ErrorKind::input, "ensemble mixes scans '" + out.scan_id + "' and '" + m.scan_id + "'");
    out.p_covid += m.p_covid;
    for (std::size_t c = 0; c < kSeverityClasses; ++c) out.severity_probs[c] += m.severity_probs[c];
  }
  const double n = static_cast<double>(members.size());
  out.p_covid /= n;
  double sum = 0;
  for (auto& v : out.severity_probs) sum += (v /= n);
  if (std::abs(sum - 1.0) > 1e-6)
    for (auto& v : out.severity_probs) v /= sum;
  derive_labels(out);
  return out;
}

/// Ensembles per-model tables that cover the same scans.
inline std::vector<ScanPrediction> ensemble_tables(const std::vector<std::vector<ScanPrediction>>& tables) {
  if (tables.empty()) fail(ErrorKind::input, "ensemble needs at least one model");
  std::map<std::string, std::vector<ScanPrediction>> by_scan;
  for (const auto& t : tables)
    for (const auto& p : t) by_scan[p.scan_id].push_back(p);
  std::vector<ScanPrediction> out;
  for (const auto& [id, members] : by_scan) {
    if (members.size() != tables.size()) fail(ErrorKind::input, "scan '" + id + "' is missing from some member tables");
    out.push_back(ensemble(members));
  }
  return out;
}

inline constexpr std::string_view kPredictionHeader = "scan_id,p_covid,covid_label,s0,s1,s2,s3,s4,severity_label";

inline std::string format_predictions(std::vector<ScanPrediction> preds) {
  if (preds.empty()) fail(ErrorKind::input, "no predictions to write");
  std::sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) { return a.scan_id < b.scan_id; });
  std::string out(kPredictionHeader);
  out += "\n";
  for (const auto& p : preds) {
    out += p.scan_id + "," + fmt6(p.p_covid) + "," + (p.covid_label ? "1" : "0");
    for (double s : p.severity_probs) out += "," + fmt6(s);
    out += "," + std::to_string(p.severity_label) + "\n";
  }
  return out;
}

inline void write_predictions(const std::vector<ScanPrediction>& preds, const std::filesystem::path& path) {
  write_text_atomic(path, format_predictions(preds));
}

inline std::vector<ScanPrediction> parse_predictions(const std::string& text, const std::string& source) {
  auto lines = detail::lines_of(text);
  if (lines.empty() || lines[0] != kPredictionHeader)
    fail(ErrorKind::format, "'" + source + "' must start with header " + std::string(kPredictionHeader));
  std::vector<ScanPrediction> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split(lines[i], ',');
    const auto where = source + " line " + std::to_string(i + 1);
    if (f.size() != 9) fail(ErrorKind::format, where + ": expected 9 fields");
    KeyValues kv{{"p_covid", f[1]}, {"s0", f[3]}, {"s1", f[4]}, {"s2", f[5]}, {"s3", f[6]}, {"s4", f[7]}};
    FieldReader r(kv, ErrorKind::format);
    ScanPrediction p;
    p.scan_id = f[0];
    if (!r.has("p_covid") || kv["p_covid"].empty()) fail(ErrorKind::format, where + ": empty p_covid");
    r.get("p_covid", p.p_covid);
    for (int c = 0; c < 5; ++c) r.get("s" + std::to_string(c), p.severity_probs[c]);
    if (f[2] != "0" && f[2] != "1") fail(ErrorKind::format, where + ": covid_label must be 0 or 1");
    p.covid_label = f[2] == "1";
    auto sev = detail::parse_int<int>(f[8]);
    if (!sev || *sev < 1 || *sev > 4) fail(ErrorKind::format, where + ": severity_label must be in 1..4");
    p.severity_label = *sev;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<ScanPrediction> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_text_file(path), path.string());
}

inline std::map<std::string, LabelDecision> decisions_of(const std::vector<ScanPrediction>& preds) {
  std::map<std::string, LabelDecision> out;
  for (const auto& p : preds) out[p.scan_id] = {p.covid_label, p.severity_label};
  return out;
}

/// Ensemble manifest: one checkpoint path per line, relative paths resolved
/// against the manifest's directory; blank lines and '#' comments ignored.
inline std::vector<std::filesystem::path> read_ensemble_manifest(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> out;
  for (auto& line : detail::lines_of(read_text_file(path))) {
    if (line.front() == '#') continue;
    std::filesystem::path p(line);
    out.push_back(p.is_absolute() ? p : path.parent_path() / p);
  }
  if (out.empty()) fail(ErrorKind::input, "ensemble manifest '" + path.string() + "' lists no checkpoints");
  return out;
}

}  // namespace voxclass
