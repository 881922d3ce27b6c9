// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fq {

enum class ErrorKind {
  kInvalidArgument,
  kFormat,
  kCorruption,
  kValidation,
  kDegenerateInput,
  kIo,
  kInvalidState,
  kEncoding,
  kOverflow,
  kDivergence,
  kConfig,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kCorruption: return "corruption error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kDegenerateInput: return "degenerate input";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kInvalidState: return "invalid state";
    case ErrorKind::kEncoding: return "encoding error";
    case ErrorKind::kOverflow: return "accumulator overflow";
    case ErrorKind::kDivergence: return "training diverged";
    case ErrorKind::kConfig: return "configuration error";
  }
  return "error";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace fq
