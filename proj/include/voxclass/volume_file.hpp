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

// Volume container: 8-byte magic "COV3DV01", three u32 dims (D, H, W), then
// D*H*W little-endian f32 values, row-major with depth slowest.

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "voxclass/binary_io.hpp"
#include "voxclass/volume.hpp"

namespace voxclass {

inline constexpr std::string_view kVolumeMagic = "COV3DV01";
inline constexpr std::size_t kVolumeHeaderBytes = 8 + 3 * 4;

inline std::vector<std::uint8_t> encode_volume(const Volume& v) {
  if (v.data.size() != v.dims.voxel_count()) fail(ErrorKind::shape, "volume payload does not match its dims");
  for (float x : v.data)
    if (!std::isfinite(x)) fail(ErrorKind::numeric, "volume contains a non-finite value");
  std::vector<std::uint8_t> out;
  out.reserve(kVolumeHeaderBytes + 4 * v.data.size());
  put_bytes(out, kVolumeMagic);
  put_u32(out, static_cast<std::uint32_t>(v.dims.depth));
  put_u32(out, static_cast<std::uint32_t>(v.dims.height));
  put_u32(out, static_cast<std::uint32_t>(v.dims.width));
  for (float x : v.data) put_f32(out, x);
  return out;
}

inline Dims3 decode_volume_header(ByteReader& in) {
  if (in.remaining() < 8 || in.str(8, "magic") != kVolumeMagic) fail(ErrorKind::format, "bad volume file magic");
  Dims3 d;
  d.depth = in.u32("dims");
  d.height = in.u32("dims");
  d.width = in.u32("dims");
  return d;
}

inline Volume decode_volume(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  Volume v;
  v.dims = decode_volume_header(in);
  const std::size_t n = v.dims.voxel_count();
  if (in.remaining() != 4 * n)
    fail(ErrorKind::length, "volume payload holds " + std::to_string(in.remaining()) + " bytes, expected " +
                                std::to_string(4 * n) + " for dims " + to_string(v.dims));
  v.data.resize(n);
  in.f32_array(v.data, "payload");
  for (float x : v.data)
    if (!std::isfinite(x)) fail(ErrorKind::numeric, "volume file contains a non-finite value");
  return v;
}

inline void write_volume_file(const Volume& v, const std::filesystem::path& path) {
  write_file_atomic(path, encode_volume(v));
}

inline void write_volume_file(const PreprocessedVolume& v, const std::filesystem::path& path) {
  write_volume_file(v.voxels, path);
}

/// Reads only the header; used to skip already-preprocessed scans.
inline std::optional<Dims3> peek_volume_dims(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::uint8_t buf[kVolumeHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), sizeof buf);
  if (in.gcount() != static_cast<std::streamsize>(sizeof buf)) return std::nullopt;
  try {
    ByteReader r(buf);
    auto dims = decode_volume_header(r);
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec || size != kVolumeHeaderBytes + 4 * dims.voxel_count()) return std::nullopt;
    return dims;
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// The scan id is taken from the file stem.
inline PreprocessedVolume read_volume_file(const std::filesystem::path& path) {
  PreprocessedVolume out;
  out.voxels = decode_volume(read_file_bytes(path));
  out.scan_id = path.stem().string();
  out.preset = preset_for_dims(out.voxels.dims);
  return out;
}

}  // namespace voxclass
