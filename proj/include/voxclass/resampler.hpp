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

// Cubic-convolution resampling (Keys kernel, a = -0.5) with half-pixel
// center alignment and clamp-to-edge sampling. Implemented separably: a
// weight table per output coordinate, then one pass per axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "voxclass/error.hpp"
#include "voxclass/volume.hpp"

namespace voxclass {

inline constexpr double kCubicA = -0.5;

constexpr double cubic_kernel(double x) {
  const double t = x < 0 ? -x : x;
  if (t <= 1.0) return ((kCubicA + 2.0) * t - (kCubicA + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((kCubicA * t - 5.0 * kCubicA) * t + 8.0 * kCubicA) * t - 4.0 * kCubicA;
  return 0.0;
}

/// Four taps (source indices already clamped) and weights per output index.
struct ResampleTable {
  std::vector<std::array<std::size_t, 4>> index;
  std::vector<std::array<double, 4>> weight;

  std::size_t size() const { return index.size(); }
};

inline ResampleTable make_resample_table(std::size_t in_size, std::size_t out_size) {
  ResampleTable t;
  t.index.resize(out_size);
  t.weight.resize(out_size);
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  const auto last = static_cast<std::ptrdiff_t>(in_size) - 1;
  for (std::size_t i = 0; i < out_size; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      const auto j = static_cast<std::ptrdiff_t>(base) - 1 + k;
      t.index[i][k] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, last));
      t.weight[i][k] = cubic_kernel(frac - (k - 1));
    }
  }
  return t;
}

namespace detail {

inline void require_finite(const float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) fail(ErrorKind::numeric, "non-finite value in resampler input");
}

inline float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Resizes one h x w plane into out_h x out_w (width pass, then height pass).
inline void resize_plane(const float* in, std::size_t h, std::size_t w, const ResampleTable& rows,
                         const ResampleTable& cols, float* out, std::vector<double>& scratch) {
  const std::size_t out_w = cols.size();
  scratch.assign(h * out_w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    const float* src = in + y * w;
    double* dst = scratch.data() + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& ix = cols.index[x];
      const auto& wx = cols.weight[x];
      dst[x] = wx[0] * src[ix[0]] + wx[1] * src[ix[1]] + wx[2] * src[ix[2]] + wx[3] * src[ix[3]];
    }
  }
  for (std::size_t y = 0; y < rows.size(); ++y) {
    const auto& iy = rows.index[y];
    const auto& wy = rows.weight[y];
    const double* r0 = scratch.data() + iy[0] * out_w;
    const double* r1 = scratch.data() + iy[1] * out_w;
    const double* r2 = scratch.data() + iy[2] * out_w;
    const double* r3 = scratch.data() + iy[3] * out_w;
    float* dst = out + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x)
      dst[x] = clip01(wy[0] * r0[x] + wy[1] * r1[x] + wy[2] * r2[x] + wy[3] * r3[x]);
  }
}

}  // namespace detail

/// Resizes an H x W slice (row-major) to out_h x out_w; output clipped to [0,1].
inline std::vector<float> bicubic_resize_2d(const std::vector<float>& slice, std::size_t h, std::size_t w,
                                            std::size_t out_h, std::size_t out_w) {
  if (h < 1 || w < 1 || slice.size() != h * w) fail(ErrorKind::shape, "slice buffer does not match H x W");
  if (out_h < 1 || out_w < 1) fail(ErrorKind::parameter, "target size must be >= 1");
  detail::require_finite(slice.data(), slice.size());
  std::vector<float> out(out_h * out_w);
  std::vector<double> scratch;
  detail::resize_plane(slice.data(), h, w, make_resample_table(h, out_h), make_resample_table(w, out_w), out.data(),
                       scratch);
  return out;
}

inline std::vector<float> bicubic_resize_2d(const std::vector<float>& slice, std::size_t h, std::size_t w,
                                            std::size_t target_side) {
  return bicubic_resize_2d(slice, h, w, target_side, target_side);
}

/// In-plane resize of every slice; depth unchanged.
inline Volume resize_slices(const Volume& in, std::size_t out_h, std::size_t out_w) {
  if (in.dims.voxel_count() == 0 || in.data.size() != in.dims.voxel_count())
    fail(ErrorKind::shape, "volume buffer does not match its dims");
  if (out_h < 1 || out_w < 1) fail(ErrorKind::parameter, "target size must be >= 1");
  detail::require_finite(in.data.data(), in.data.size());
  const auto rows = make_resample_table(in.dims.height, out_h);
  const auto cols = make_resample_table(in.dims.width, out_w);
  Volume out({in.dims.depth, out_h, out_w});
  std::vector<double> scratch;
  for (std::size_t d = 0; d < in.dims.depth; ++d)
    detail::resize_plane(in.slice(d), in.dims.height, in.dims.width, rows, cols, out.slice(d), scratch);
  return out;
}

/// Resamples along depth only. A single slice is replicated; output clipped to [0,1].
inline Volume cubic_resample_1d(const Volume& in, std::size_t target_depth) {
  if (target_depth < 1) fail(ErrorKind::parameter, "target depth must be >= 1");
  if (in.dims.depth < 1 || in.data.size() != in.dims.voxel_count())
    fail(ErrorKind::shape, "volume buffer does not match its dims");
  detail::require_finite(in.data.data(), in.data.size());
  const auto table = make_resample_table(in.dims.depth, target_depth);
  const std::size_t plane = in.dims.slice_size();
  Volume out({target_depth, in.dims.height, in.dims.width});
  for (std::size_t d = 0; d < target_depth; ++d) {
    const auto& ix = table.index[d];
    const auto& wx = table.weight[d];
    const float* s0 = in.slice(ix[0]);
    const float* s1 = in.slice(ix[1]);
    const float* s2 = in.slice(ix[2]);
    const float* s3 = in.slice(ix[3]);
    float* dst = out.slice(d);
    for (std::size_t i = 0; i < plane; ++i)
      dst[i] = detail::clip01(wx[0] * s0[i] + wx[1] * s1[i] + wx[2] * s2[i] + wx[3] * s3[i]);
  }
  return out;
}

/// In-plane resize first, then depth resampling.
inline Volume resample_volume(const Volume& in, Dims3 target) {
  return cubic_resample_1d(resize_slices(in, target.height, target.width), target.depth);
}

inline Volume normalize_intensities(const Grid3<std::uint8_t>& raw) {
  Volume v(raw.dims);
  for (std::size_t i = 0; i < raw.data.size(); ++i) v.data[i] = static_cast<float>(raw.data[i] / 255.0);
  return v;
}

inline PreprocessedVolume preprocess_volume(const RawVolume& raw, SizePreset preset) {
  if (raw.voxels.dims.depth < 1 || raw.voxels.dims.height < 1 || raw.voxels.dims.width < 1)
    fail(ErrorKind::shape, "raw volume '" + raw.scan_id + "' is empty");
  PreprocessedVolume out;
  out.scan_id = raw.scan_id;
  out.preset = preset;
  out.voxels = resample_volume(normalize_intensities(raw.voxels), preset_dims(preset));
  return out;
}

}  // namespace voxclass
