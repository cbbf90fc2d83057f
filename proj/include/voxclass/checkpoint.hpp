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

// Checkpoint container:
//   "VXCKPT01"                       8-byte magic
//   u32 n, n bytes                   key = value header (config echo, seed, epoch, ...)
//   u32 blob count
//   per blob: u32 name length, name, u32 kind (0 param, 1 buffer),
//             u32 rank, rank x u32 dims, prod(dims) x f32
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxclass/binary_io.hpp"
#include "voxclass/keyvalue.hpp"
#include "voxclass/network.hpp"

namespace voxclass {

inline constexpr std::string_view kCheckpointMagic = "VXCKPT01";

inline KeyValues network_config_to_kv(const NetworkConfig& c) {
  return {
      {"net.stage_widths", format_list(c.stage_widths)},
      {"net.blocks_per_stage", format_list(c.blocks_per_stage)},
      {"net.stage_dropout", format_list(c.stage_dropout)},
      {"net.head_hidden", std::to_string(c.head_hidden)},
      {"net.head_dropout", format_double(c.head_dropout)},
      {"net.head_mode", std::string(to_string(c.head_mode))},
      {"net.input_dims", std::to_string(c.input_dims.depth) + "," + std::to_string(c.input_dims.height) + "," +
                             std::to_string(c.input_dims.width)},
  };
}

inline NetworkConfig network_config_from_kv(const KeyValues& kv, NetworkConfig c = {}) {
  FieldReader r(kv);
  r.get_list("net.stage_widths", c.stage_widths);
  r.get_list("net.blocks_per_stage", c.blocks_per_stage);
  r.get_list("net.stage_dropout", c.stage_dropout);
  r.get_int("net.head_hidden", c.head_hidden);
  r.get("net.head_dropout", c.head_dropout);
  if (auto* m = r.raw("net.head_mode")) {
    auto mode = parse_head_mode(*m);
    if (!mode) r.bad("net.head_mode", "expected covid_only, severity_only or dual");
    c.head_mode = *mode;
  }
  if (r.has("net.input_dims")) {
    std::array<std::size_t, 3> d{};
    r.get_list("net.input_dims", d);
    c.input_dims = {d[0], d[1], d[2]};
  }
  return c;
}

struct NamedBlob {
  std::string name;
  std::uint32_t kind = 0;
  nn::Shape shape;
  std::vector<float> values;

  friend bool operator==(const NamedBlob&, const NamedBlob&) = default;
};

struct Checkpoint {
  NetworkConfig network;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  KeyValues metadata;  // free-form extras: run config echo, scores
  std::vector<NamedBlob> blobs;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline Checkpoint capture_checkpoint(Network<float>& net, std::uint64_t seed, std::uint32_t epoch,
                                     KeyValues metadata = {}) {
  Checkpoint ck;
  ck.network = net.config();
  ck.seed = seed;
  ck.epoch = epoch;
  ck.metadata = std::move(metadata);
  for (auto* p : net.parameters()) ck.blobs.push_back({p->name, 0, p->shape, p->value});
  for (auto* b : net.buffers()) ck.blobs.push_back({b->name, 1, b->shape, b->value});
  return ck;
}

inline void load_into(const Checkpoint& ck, Network<float>& net) {
  std::map<std::string, const NamedBlob*> by_name;
  for (const auto& b : ck.blobs) by_name[b.name] = &b;
  auto take = [&](const std::string& name, const nn::Shape& shape, std::vector<float>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorKind::format, "checkpoint lacks blob '" + name + "'");
    if (it->second->shape != shape)
      fail(ErrorKind::shape, "checkpoint blob '" + name + "' has shape " + nn::to_string(it->second->shape) +
                                 ", network expects " + nn::to_string(shape));
    dst = it->second->values;
  };
  for (auto* p : net.parameters()) take(p->name, p->shape, p->value);
  for (auto* b : net.buffers()) take(b->name, b->shape, b->value);
}

inline Network<float> restore_network(const Checkpoint& ck) {
  Network<float> net(ck.network, ck.seed);
  load_into(ck, net);
  return net;
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  KeyValues header = network_config_to_kv(ck.network);
  header["format"] = "1";
  header["seed"] = std::to_string(ck.seed);
  header["epoch"] = std::to_string(ck.epoch);
  for (const auto& [k, v] : ck.metadata) {
    if (k.find_first_of("=\n#") != std::string::npos || v.find_first_of("\n#") != std::string::npos)
      fail(ErrorKind::parameter, "checkpoint metadata '" + k + "' contains reserved characters");
    header["meta." + k] = v;
  }
  const std::string text = format_key_values(header);
  std::vector<std::uint8_t> out;
  put_bytes(out, kCheckpointMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  put_bytes(out, text);
  put_u32(out, static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& b : ck.blobs) {
    if (b.values.size() != nn::shape_size(b.shape)) fail(ErrorKind::shape, "blob '" + b.name + "' size mismatch");
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    put_bytes(out, b.name);
    put_u32(out, b.kind);
    put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : b.values) put_f32(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.remaining() < 8 || in.str(8, "magic") != kCheckpointMagic) fail(ErrorKind::format, "bad checkpoint magic");
  const auto text_len = in.u32("header length");
  auto header = parse_key_values(in.str(text_len, "header"), "checkpoint header");
  Checkpoint ck;
  ck.network = network_config_from_kv(header);
  FieldReader r(header, ErrorKind::format);
  r.get_int("seed", ck.seed);
  r.get_int("epoch", ck.epoch);
  for (const auto& [k, v] : header)
    if (k.rfind("meta.", 0) == 0) ck.metadata[k.substr(5)] = v;
  const auto n = in.u32("blob count");
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedBlob b;
    b.name = in.str(in.u32("name length"), "blob name");
    b.kind = in.u32("blob kind");
    const auto rank = in.u32("blob rank");
    if (rank > 8) fail(ErrorKind::format, "blob '" + b.name + "' has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) b.shape.push_back(in.u32("blob dims"));
    const auto count = nn::shape_size(b.shape);
    in.require(4 * count, "blob values");
    b.values.resize(count);
    in.f32_array(b.values, "blob values");
    ck.blobs.push_back(std::move(b));
  }
  if (in.remaining() != 0) fail(ErrorKind::length, "trailing bytes after checkpoint blobs");
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace voxclass
