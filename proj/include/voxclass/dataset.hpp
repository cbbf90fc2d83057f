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

// Dataset layout:
//   <root>/{train,validation,test}/{covid,non-covid}/<scan_id>/<n>.jpg
//   <root>/test/unlabeled/<scan_id>/<n>.jpg      (scans without a label)
//   <root>/severity.csv                         header: scan_id,partition,severity

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "voxclass/binary_io.hpp"
#include "voxclass/error.hpp"
#include "voxclass/jpeg.hpp"
#include "voxclass/volume.hpp"

namespace voxclass {

enum class Partition { train, validation, test };

constexpr std::array<Partition, 3> kAllPartitions = {Partition::train, Partition::validation, Partition::test};

constexpr std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::validation: return "validation";
    case Partition::test: return "test";
  }
  return "";
}

inline std::optional<Partition> parse_partition(std::string_view s) {
  for (auto p : kAllPartitions)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

inline constexpr std::string_view kCovidDir = "covid";
inline constexpr std::string_view kNonCovidDir = "non-covid";
inline constexpr std::string_view kUnlabeledDir = "unlabeled";
inline constexpr std::string_view kSeverityTable = "severity.csv";

struct ScanRecord {
  std::string scan_id;
  Partition partition = Partition::train;
  std::optional<bool> covid_label;
  std::optional<int> severity;  // 1 mild, 2 moderate, 3 severe, 4 critical

  /// Severity-head class: 0 for negatives, 1..4 for annotated positives,
  /// empty for unlabeled or severity-unknown scans.
  std::optional<int> severity_class() const {
    if (severity) return severity;
    if (covid_label && !*covid_label) return 0;
    return std::nullopt;
  }

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

struct PartitionCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t unlabeled = 0;
  std::array<std::size_t, 4> severity{};  // index 0 = class 1
  std::size_t positive_without_severity = 0;

  std::size_t total() const { return positive + negative + unlabeled; }
  friend bool operator==(const PartitionCounts&, const PartitionCounts&) = default;
};

inline void validate_record(const ScanRecord& r) {
  if (r.scan_id.empty()) fail(ErrorKind::integrity, "empty scan id");
  if (r.severity) {
    if (*r.severity < 1 || *r.severity > 4)
      fail(ErrorKind::integrity, "scan '" + r.scan_id + "' has severity " + std::to_string(*r.severity) +
                                     " outside 1..4");
    if (!r.covid_label || !*r.covid_label)
      fail(ErrorKind::integrity, "scan '" + r.scan_id + "' has a severity but is not COVID positive");
  }
}

/// Records plus per-partition tallies. Construction validates uniqueness and
/// per-record invariants; the tallies are always recomputed from the records.
class AnnotationSet {
 public:
  AnnotationSet() = default;

  explicit AnnotationSet(std::vector<ScanRecord> records) : records_(std::move(records)) {
    std::sort(records_.begin(), records_.end(),
              [](const ScanRecord& a, const ScanRecord& b) { return a.scan_id < b.scan_id; });
    for (std::size_t i = 0; i < records_.size(); ++i) {
      validate_record(records_[i]);
      if (i > 0 && records_[i].scan_id == records_[i - 1].scan_id)
        fail(ErrorKind::integrity, "duplicate scan id '" + records_[i].scan_id + "'");
    }
    for (const auto& r : records_) {
      auto& c = counts_[static_cast<std::size_t>(r.partition)];
      if (!r.covid_label) {
        ++c.unlabeled;
      } else if (*r.covid_label) {
        ++c.positive;
        if (r.severity)
          ++c.severity[static_cast<std::size_t>(*r.severity - 1)];
        else
          ++c.positive_without_severity;
      } else {
        ++c.negative;
      }
    }
  }

  const std::vector<ScanRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const PartitionCounts& counts(Partition p) const { return counts_[static_cast<std::size_t>(p)]; }

  const ScanRecord* find(std::string_view scan_id) const {
    auto it = std::lower_bound(records_.begin(), records_.end(), scan_id,
                               [](const ScanRecord& r, std::string_view id) { return r.scan_id < id; });
    return it != records_.end() && it->scan_id == scan_id ? &*it : nullptr;
  }

  std::vector<ScanRecord> in_partition(Partition p) const {
    std::vector<ScanRecord> out;
    for (const auto& r : records_)
      if (r.partition == p) out.push_back(r);
    return out;
  }

  friend bool operator==(const AnnotationSet& a, const AnnotationSet& b) { return a.records_ == b.records_; }

 private:
  std::vector<ScanRecord> records_;
  std::array<PartitionCounts, 3> counts_{};
};

namespace detail {

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  s = trim(s);
  Int v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

struct SeverityRow {
  std::string scan_id;
  Partition partition;
  int severity;
};

inline std::vector<SeverityRow> parse_severity_table(const std::string& text, const std::string& source) {
  auto lines = detail::lines_of(text);
  if (lines.empty() || lines[0] != "scan_id,partition,severity")
    fail(ErrorKind::format, "'" + source + "' must start with header scan_id,partition,severity");
  std::vector<SeverityRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split(lines[i], ',');
    const auto where = source + " line " + std::to_string(i + 1);
    if (f.size() != 3) fail(ErrorKind::format, where + ": expected 3 fields");
    auto part = parse_partition(detail::trim(f[1]));
    if (!part) fail(ErrorKind::format, where + ": unknown partition '" + f[1] + "'");
    auto sev = detail::parse_int<int>(f[2]);
    if (!sev || *sev < 1 || *sev > 4) fail(ErrorKind::format, where + ": severity must be an integer in 1..4");
    rows.push_back({std::string(detail::trim(f[0])), *part, *sev});
  }
  return rows;
}

inline std::string format_severity_table(const AnnotationSet& set) {
  std::string out = "scan_id,partition,severity\n";
  for (const auto& r : set.records())
    if (r.severity)
      out += r.scan_id + "," + std::string(to_string(r.partition)) + "," + std::to_string(*r.severity) + "\n";
  return out;
}

/// Indexes a dataset root laid out as described at the top of this header.
inline AnnotationSet scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) fail(ErrorKind::structural, "dataset root '" + root.string() + "' is not a directory");
  std::vector<ScanRecord> records;
  std::set<std::string> seen;
  for (auto part : kAllPartitions) {
    const fs::path pdir = root / std::string(to_string(part));
    if (!fs::is_directory(pdir))
      fail(ErrorKind::structural, "missing partition directory '" + pdir.string() + "'");
    for (const auto& group : detail::sorted_subdirs(pdir)) {
      const auto name = group.filename().string();
      std::optional<bool> label;
      if (name == kCovidDir)
        label = true;
      else if (name == kNonCovidDir)
        label = false;
      else if (name == kUnlabeledDir)
        label = std::nullopt;
      else
        fail(ErrorKind::structural, "unexpected directory '" + group.string() + "'");
      for (const auto& scan : detail::sorted_subdirs(group)) {
        auto id = scan.filename().string();
        if (!seen.insert(id).second) fail(ErrorKind::integrity, "duplicate scan id '" + id + "'");
        records.push_back({id, part, label, std::nullopt});
      }
    }
  }
  const fs::path sev_path = root / std::string(kSeverityTable);
  if (fs::exists(sev_path)) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < records.size(); ++i) index[records[i].scan_id] = i;
    for (const auto& row : parse_severity_table(read_text_file(sev_path), sev_path.string())) {
      auto it = index.find(row.scan_id);
      if (it == index.end())
        fail(ErrorKind::integrity, "severity table references unknown scan '" + row.scan_id + "'");
      auto& rec = records[it->second];
      if (rec.partition != row.partition)
        fail(ErrorKind::integrity, "severity table places scan '" + row.scan_id + "' in partition " +
                                       std::string(to_string(row.partition)) + " but it lives in " +
                                       std::string(to_string(rec.partition)));
      if (rec.severity) fail(ErrorKind::integrity, "scan '" + row.scan_id + "' has two severity rows");
      rec.severity = row.severity;
    }
  }
  return AnnotationSet(std::move(records));
}

/// Directory of the scan within a dataset root.
inline std::filesystem::path scan_directory(const std::filesystem::path& root, const ScanRecord& r) {
  std::string_view group = !r.covid_label ? kUnlabeledDir : (*r.covid_label ? kCovidDir : kNonCovidDir);
  return root / std::string(to_string(r.partition)) / std::string(group) / r.scan_id;
}

namespace detail {

inline bool is_jpeg_extension(std::string ext) {
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg";
}

}  // namespace detail

/// Lists the `<n>.jpg` slice files of a scan directory in ascending numeric
/// order, independent of directory enumeration order.
inline std::vector<std::pair<std::uint64_t, std::filesystem::path>> list_slice_files(
    const std::filesystem::path& scan_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(scan_dir)) fail(ErrorKind::structural, "'" + scan_dir.string() + "' is not a directory");
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  for (const auto& e : fs::directory_iterator(scan_dir)) {
    if (!e.is_regular_file() || !detail::is_jpeg_extension(e.path().extension().string())) continue;
    auto idx = detail::parse_int<std::uint64_t>(e.path().stem().string());
    if (!idx) continue;
    files.emplace_back(*idx, e.path());
  }
  std::sort(files.begin(), files.end());
  for (std::size_t i = 1; i < files.size(); ++i)
    if (files[i].first == files[i - 1].first)
      fail(ErrorKind::integrity, "two slice files share index " + std::to_string(files[i].first) + " in '" +
                                     scan_dir.string() + "'");
  return files;
}

inline RawVolume load_slice_stack(const std::filesystem::path& scan_dir) {
  auto files = list_slice_files(scan_dir);
  if (files.empty()) fail(ErrorKind::structural, "no numbered slice images in '" + scan_dir.string() + "'");
  RawVolume vol;
  vol.scan_id = scan_dir.filename().string();
  for (std::size_t i = 0; i < files.size(); ++i) {
    auto img = read_jpeg(files[i].second);
    if (i == 0) {
      if (img.height < 8 || img.width < 8)
        fail(ErrorKind::shape, "slice '" + files[i].second.string() + "' is smaller than 8x8");
      vol.voxels = Grid3<std::uint8_t>({files.size(), img.height, img.width});
    } else if (img.height != vol.voxels.dims.height || img.width != vol.voxels.dims.width) {
      fail(ErrorKind::shape, "slice '" + files[i].second.string() + "' is " + std::to_string(img.height) + "x" +
                                 std::to_string(img.width) + ", expected " + std::to_string(vol.voxels.dims.height) +
                                 "x" + std::to_string(vol.voxels.dims.width));
    }
    std::copy(img.pixels.begin(), img.pixels.end(), vol.voxels.slice(i));
  }
  return vol;
}

// Flat annotation table stored next to preprocessed volumes, so a volume
// directory is self-contained: scan_id,partition,covid_label,severity with
// empty fields for absent values.
inline constexpr std::string_view kAnnotationsFile = "annotations.csv";

inline std::string format_annotations(const AnnotationSet& set) {
  std::string out = "scan_id,partition,covid_label,severity\n";
  for (const auto& r : set.records()) {
    out += r.scan_id + "," + std::string(to_string(r.partition)) + ",";
    if (r.covid_label) out += *r.covid_label ? "1" : "0";
    out += ",";
    if (r.severity) out += std::to_string(*r.severity);
    out += "\n";
  }
  return out;
}

inline AnnotationSet parse_annotations(const std::string& text, const std::string& source) {
  auto lines = detail::lines_of(text);
  if (lines.empty() || lines[0] != "scan_id,partition,covid_label,severity")
    fail(ErrorKind::format, "'" + source + "' must start with header scan_id,partition,covid_label,severity");
  std::vector<ScanRecord> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split(lines[i], ',');
    const auto where = source + " line " + std::to_string(i + 1);
    if (f.size() != 4) fail(ErrorKind::format, where + ": expected 4 fields");
    ScanRecord r;
    r.scan_id = std::string(detail::trim(f[0]));
    auto part = parse_partition(detail::trim(f[1]));
    if (!part) fail(ErrorKind::format, where + ": unknown partition");
    r.partition = *part;
    auto label = detail::trim(f[2]);
    if (label == "1")
      r.covid_label = true;
    else if (label == "0")
      r.covid_label = false;
    else if (!label.empty())
      fail(ErrorKind::format, where + ": covid_label must be 0, 1 or empty");
    if (!detail::trim(f[3]).empty()) {
      auto sev = detail::parse_int<int>(f[3]);
      if (!sev) fail(ErrorKind::format, where + ": bad severity");
      r.severity = *sev;
    }
    records.push_back(std::move(r));
  }
  return AnnotationSet(std::move(records));
}

inline AnnotationSet read_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_text_file(path), path.string());
}

/// Annotations for either a raw dataset root or a preprocessed volume
/// directory carrying annotations.csv.
inline AnnotationSet load_annotations(const std::filesystem::path& dir) {
  const auto table = dir / std::string(kAnnotationsFile);
  if (std::filesystem::exists(table)) return read_annotations(table);
  return scan_dataset(dir);
}

}  // namespace voxclass
