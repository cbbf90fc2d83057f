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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voxclass/error.hpp"

namespace voxclass {

struct Dims3 {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t voxel_count() const { return depth * height * width; }
  constexpr std::size_t slice_size() const { return height * width; }
  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

inline std::string to_string(const Dims3& d) {
  return std::to_string(d.depth) + "x" + std::to_string(d.height) + "x" + std::to_string(d.width);
}

/// Dense depth x height x width grid, row-major with depth slowest.
template <typename T>
struct Grid3 {
  Dims3 dims;
  std::vector<T> data;

  Grid3() = default;
  explicit Grid3(Dims3 d, T fill = T{}) : dims(d), data(d.voxel_count(), fill) {}

  T& at(std::size_t d, std::size_t h, std::size_t w) { return data[(d * dims.height + h) * dims.width + w]; }
  const T& at(std::size_t d, std::size_t h, std::size_t w) const {
    return data[(d * dims.height + h) * dims.width + w];
  }
  T* slice(std::size_t d) { return data.data() + d * dims.slice_size(); }
  const T* slice(std::size_t d) const { return data.data() + d * dims.slice_size(); }

  friend bool operator==(const Grid3&, const Grid3&) = default;
};

using Volume = Grid3<float>;

/// Decoded slice stack of 8-bit grayscale intensities.
struct RawVolume {
  std::string scan_id;
  Grid3<std::uint8_t> voxels;
};

enum class SizePreset { small, medium, large };

constexpr std::array<SizePreset, 3> kAllPresets = {SizePreset::small, SizePreset::medium, SizePreset::large};

constexpr std::size_t preset_side(SizePreset p) {
  switch (p) {
    case SizePreset::small: return 128;
    case SizePreset::medium: return 256;
    case SizePreset::large: return 320;
  }
  return 0;
}

constexpr std::size_t preset_depth(SizePreset p) { return preset_side(p) / 2; }

constexpr Dims3 preset_dims(SizePreset p) { return {preset_depth(p), preset_side(p), preset_side(p)}; }

constexpr std::string_view to_string(SizePreset p) {
  switch (p) {
    case SizePreset::small: return "small";
    case SizePreset::medium: return "medium";
    case SizePreset::large: return "large";
  }
  return "";
}

inline SizePreset parse_preset(std::string_view name) {
  for (auto p : kAllPresets)
    if (to_string(p) == name) return p;
  fail(ErrorKind::parameter, "unknown size preset '" + std::string(name) + "' (expected small, medium or large)");
}

inline std::optional<SizePreset> preset_for_dims(const Dims3& dims) {
  for (auto p : kAllPresets)
    if (preset_dims(p) == dims) return p;
  return std::nullopt;
}

/// Single-channel float volume ready for the network. `preset` is empty when
/// the dims match none of the standard presets (e.g. test fixtures).
struct PreprocessedVolume {
  std::string scan_id;
  std::optional<SizePreset> preset;
  Volume voxels;
};

/// Reverses the width axis of every axial slice.
template <typename T>
void reflect_sagittal_inplace(Grid3<T>& g) {
  const std::size_t rows = g.dims.depth * g.dims.height;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = g.data.data() + r * g.dims.width;
    for (std::size_t a = 0, b = g.dims.width; a + 1 < b; ++a, --b) std::swap(row[a], row[b - 1]);
  }
}

template <typename T>
Grid3<T> reflect_sagittal(Grid3<T> g) {
  reflect_sagittal_inplace(g);
  return g;
}

}  // namespace voxclass
