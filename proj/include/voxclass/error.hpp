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

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxclass {

enum class ErrorKind {
  // validation: bad arguments or configuration supplied by the caller
  parameter,
  configuration,
  input,
  // data: malformed or inconsistent files and datasets
  structural,
  integrity,
  decode,
  shape,
  format,
  length,
  numeric,
  coverage,
  io,
  evaluation,
  // internal: misuse of stateful objects
  state,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::input: return "input error";
    case ErrorKind::structural: return "structural error";
    case ErrorKind::integrity: return "integrity error";
    case ErrorKind::decode: return "decode error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::format: return "format error";
    case ErrorKind::length: return "length error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::coverage: return "coverage error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::evaluation: return "evaluation error";
    case ErrorKind::state: return "state error";
  }
  return "error";
}

/// Process exit code associated with an error kind: 1 validation, 2 data,
/// 3 internal.
constexpr int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter:
    case ErrorKind::configuration:
    case ErrorKind::input:
      return 1;
    case ErrorKind::state:
      return 3;
    default:
      return 2;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace voxclass
