// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moeup {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNotPositiveDefinite,
  kNonFinite,
  kUnknownKind,
  kEmptySplit,
  kMagicMismatch,
  kVersionMismatch,
  kTruncatedFile,
  kShapeMismatch,
  kIoError,
  kDivergence,
  kConfigError,
  kMissingArtifact,
  kHashMismatch,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library is an Error carrying a code; the CLI maps
// codes to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the Cholesky solver; `pivot` is the first column whose diagonal
// went non-positive. `layer` is filled in when the failure happens inside a
// per-layer router solve (-1 otherwise).
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(std::size_t pivot, long layer = -1);

  std::size_t pivot() const noexcept { return pivot_; }
  long layer() const noexcept { return layer_; }

 private:
  std::size_t pivot_;
  long layer_;
};

// Training produced a non-finite loss at `step`.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(long step);
  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace moeup
