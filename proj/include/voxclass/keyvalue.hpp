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

// Flat `key = value` text records: one pair per line, '#' starts a comment.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "voxclass/dataset.hpp"
#include "voxclass/error.hpp"

namespace voxclass {

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto t = detail::trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorKind::format, source + " line " + std::to_string(lineno) + ": expected key = value");
    auto key = std::string(detail::trim(t.substr(0, eq)));
    auto value = std::string(detail::trim(t.substr(eq + 1)));
    if (key.empty()) fail(ErrorKind::format, source + " line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

/// Shortest round-trip representation.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

/// Typed reads that report the offending field by name.
class FieldReader {
 public:
  FieldReader(const KeyValues& kv, ErrorKind kind = ErrorKind::configuration) : kv_(kv), kind_(kind) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  const std::string* raw(const std::string& key) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? nullptr : &it->second;
  }

  [[noreturn]] void bad(const std::string& key, const std::string& why) const {
    fail(kind_, "field '" + key + "': " + why);
  }

  void get(const std::string& key, double& out) const {
    if (auto* s = raw(key)) {
      double v{};
      auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
      if (ec != std::errc() || p != s->data() + s->size() || !std::isfinite(v)) bad(key, "expected a number, got '" + *s + "'");
      out = v;
    }
  }

  template <typename Int>
  void get_int(const std::string& key, Int& out) const {
    if (auto* s = raw(key)) {
      auto v = detail::parse_int<Int>(*s);
      if (!v) bad(key, "expected an integer, got '" + *s + "'");
      out = *v;
    }
  }

  void get(const std::string& key, bool& out) const {
    if (auto* s = raw(key)) {
      if (*s == "true" || *s == "1" || *s == "yes")
        out = true;
      else if (*s == "false" || *s == "0" || *s == "no")
        out = false;
      else
        bad(key, "expected true/false, got '" + *s + "'");
    }
  }

  void get(const std::string& key, std::string& out) const {
    if (auto* s = raw(key)) out = *s;
  }

  template <typename V, std::size_t N>
  void get_list(const std::string& key, std::array<V, N>& out) const {
    auto* s = raw(key);
    if (!s) return;
    auto parts = detail::split(*s, ',');
    if (parts.size() != N) bad(key, "expected " + std::to_string(N) + " comma-separated values");
    for (std::size_t i = 0; i < N; ++i) {
      KeyValues one{{key, std::string(detail::trim(parts[i]))}};
      FieldReader r(one, kind_);
      if constexpr (std::is_floating_point_v<V>)
        r.get(key, out[i]);
      else
        r.get_int(key, out[i]);
    }
  }

 private:
  const KeyValues& kv_;
  ErrorKind kind_;
};

template <typename V, std::size_t N>
std::string format_list(const std::array<V, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<V>)
      out += format_double(a[i]);
    else
      out += std::to_string(a[i]);
  }
  return out;
}

}  // namespace voxclass
