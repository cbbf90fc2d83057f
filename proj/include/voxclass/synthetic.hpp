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

// Synthetic slice-stack datasets with a known, learnable class structure.
// Negative scans are background noise; positive scans add bright ellipsoidal
// blobs whose count and extent grow with the severity class.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxclass/dataset.hpp"
#include "voxclass/jpeg.hpp"
#include "voxclass/random.hpp"

namespace voxclass {

struct IntRange {
  std::int64_t min = 0;
  std::int64_t max = 0;
};

struct BlobSignal {
  int count = 0;
  double radius_fraction = 0.0;  // semi-axis as a fraction of each dimension
  double intensity = 0.0;
};

struct SyntheticSpec {
  int n_scans_per_class = 10;
  std::uint64_t seed = 7;
  IntRange depth{16, 40};
  IntRange height{48, 80};
  IntRange width{48, 80};
  double validation_fraction = 0.4;
  // Fraction of training positives per class whose severity row is withheld,
  // so they enter training as positives of unknown severity.
  double unlabeled_fraction = 0.2;
  int n_test_per_class = 0;
  double background_mean = 40.0;
  double background_noise = 12.0;
  double blob_noise = 10.0;
  // index 0 is the negative class (no blobs), 1..4 the severity classes
  std::array<BlobSignal, 5> class_signal{{
      {0, 0.0, 0.0},
      {1, 0.18, 200.0},
      {2, 0.20, 200.0},
      {3, 0.22, 200.0},
      {4, 0.24, 200.0},
  }};
  int jpeg_quality = 95;
};

inline void validate(const SyntheticSpec& s) {
  auto bad = [](const std::string& what) { fail(ErrorKind::parameter, "synthetic spec: " + what); };
  if (s.n_scans_per_class < 1) bad("n_scans_per_class must be >= 1");
  if (s.depth.min < 1 || s.depth.max < s.depth.min) bad("depth range invalid");
  if (s.height.min < 8 || s.height.max < s.height.min) bad("height range invalid (min 8)");
  if (s.width.min < 8 || s.width.max < s.width.min) bad("width range invalid (min 8)");
  if (!(s.validation_fraction >= 0.0 && s.validation_fraction < 1.0)) bad("validation_fraction must be in [0,1)");
  if (!(s.unlabeled_fraction >= 0.0 && s.unlabeled_fraction <= 1.0)) bad("unlabeled_fraction must be in [0,1]");
  if (s.n_test_per_class < 0) bad("n_test_per_class must be >= 0");
  if (s.jpeg_quality < 1 || s.jpeg_quality > 100) bad("jpeg_quality must be in 1..100");
  if (s.class_signal[0].count != 0) bad("negative class must carry no blobs");
  for (int c = 2; c <= 4; ++c) {
    const auto& lo = s.class_signal[c - 1];
    const auto& hi = s.class_signal[c];
    if (hi.count < lo.count || hi.radius_fraction < lo.radius_fraction || (hi.count == lo.count && hi.radius_fraction == lo.radius_fraction))
      bad("blob count/extent must increase with severity");
  }
  for (int c = 1; c <= 4; ++c)
    if (s.class_signal[c].count < 1 || s.class_signal[c].radius_fraction <= 0.0) bad("positive classes need blobs");
}

/// Renders one scan of the given class (0 negative, 1..4 severity).
inline RawVolume render_synthetic_scan(const SyntheticSpec& spec, int cls, Rng& rng, std::string scan_id) {
  Dims3 dims{static_cast<std::size_t>(uniform_int(rng, spec.depth.min, spec.depth.max)),
             static_cast<std::size_t>(uniform_int(rng, spec.height.min, spec.height.max)),
             static_cast<std::size_t>(uniform_int(rng, spec.width.min, spec.width.max))};
  std::vector<double> value(dims.voxel_count());
  for (auto& v : value) v = spec.background_mean + spec.background_noise * normal(rng);

  struct Blob {
    std::array<double, 3> center, radius;
  };
  const auto& sig = spec.class_signal[cls];
  const std::array<double, 3> extent = {double(dims.depth), double(dims.height), double(dims.width)};
  std::vector<Blob> blobs;
  for (int b = 0; b < sig.count; ++b) {
    Blob blob;
    for (int a = 0; a < 3; ++a) {
      blob.radius[a] = std::max(0.75, sig.radius_fraction * extent[a] * uniform(rng, 0.9, 1.1));
      const double lo = std::min(blob.radius[a], extent[a] / 2);
      blob.center[a] = uniform(rng, lo, extent[a] - lo);
    }
    blobs.push_back(blob);
  }
  for (std::size_t d = 0; d < dims.depth; ++d)
    for (std::size_t h = 0; h < dims.height; ++h)
      for (std::size_t w = 0; w < dims.width; ++w) {
        const std::array<double, 3> p = {d + 0.5, h + 0.5, w + 0.5};
        for (const auto& blob : blobs) {
          double r2 = 0;
          for (int a = 0; a < 3; ++a) {
            const double t = (p[a] - blob.center[a]) / blob.radius[a];
            r2 += t * t;
          }
          if (r2 <= 1.0) {
            value[(d * dims.height + h) * dims.width + w] = sig.intensity + spec.blob_noise * normal(rng);
            break;
          }
        }
      }
  RawVolume vol;
  vol.scan_id = std::move(scan_id);
  vol.voxels = Grid3<std::uint8_t>(dims);
  for (std::size_t i = 0; i < value.size(); ++i)
    vol.voxels.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(value[i]), 0L, 255L));
  return vol;
}

inline void write_slice_stack(const RawVolume& vol, const std::filesystem::path& scan_dir, int quality) {
  std::filesystem::create_directories(scan_dir);
  const auto& g = vol.voxels;
  for (std::size_t d = 0; d < g.dims.depth; ++d) {
    auto bytes = encode_jpeg(std::span(g.slice(d), g.dims.slice_size()), g.dims.height, g.dims.width, 1, quality);
    write_file_atomic(scan_dir / (std::to_string(d + 1) + ".jpg"), bytes);
  }
}

/// Writes a dataset in the standard layout and returns its manifest.
inline AnnotationSet generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_root) {
  namespace fs = std::filesystem;
  validate(spec);
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec || !fs::is_directory(out_root))
    fail(ErrorKind::io, "cannot create dataset root '" + out_root.string() + "'");
  for (auto part : kAllPartitions) {
    fs::create_directories(out_root / std::string(to_string(part)), ec);
    if (ec) fail(ErrorKind::io, "cannot create partition directory under '" + out_root.string() + "'");
  }

  Rng rng(spec.seed);
  const int n = spec.n_scans_per_class;
  const int n_val = static_cast<int>(std::lround(n * spec.validation_fraction));
  const int n_train = n - n_val;
  const int n_withheld = static_cast<int>(std::floor(n_train * spec.unlabeled_fraction + 1e-9));

  std::vector<ScanRecord> records;
  int serial = 0;
  auto emit = [&](int cls, Partition part, bool labeled, bool withhold_severity) {
    char id[32];
    std::snprintf(id, sizeof id, "scan%04d", ++serial);
    RawVolume vol = render_synthetic_scan(spec, cls, rng, id);
    ScanRecord rec{id, part, std::nullopt, std::nullopt};
    if (labeled) {
      rec.covid_label = cls > 0;
      if (cls > 0 && !withhold_severity) rec.severity = cls;
    }
    write_slice_stack(vol, scan_directory(out_root, rec), spec.jpeg_quality);
    records.push_back(std::move(rec));
  };
  for (int cls = 0; cls <= 4; ++cls) {
    for (int i = 0; i < n; ++i) emit(cls, i < n_train ? Partition::train : Partition::validation, true, i < n_withheld);
    for (int i = 0; i < spec.n_test_per_class; ++i) emit(cls, Partition::test, false, false);
  }
  AnnotationSet set(std::move(records));
  write_text_atomic(out_root / std::string(kSeverityTable), format_severity_table(set));
  return set;
}

}  // namespace voxclass
