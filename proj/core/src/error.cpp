// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/error.hpp"

namespace moeup {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNotPositiveDefinite: return "not positive definite";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kUnknownKind: return "unknown kind";
    case ErrorCode::kEmptySplit: return "empty split";
    case ErrorCode::kMagicMismatch: return "magic mismatch";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncatedFile: return "truncated file";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kIoError: return "i/o error";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kConfigError: return "config error";
    case ErrorCode::kMissingArtifact: return "missing artifact";
    case ErrorCode::kHashMismatch: return "config hash mismatch";
  }
  return "unknown error";
}

namespace {
std::string pivot_message(std::size_t pivot, long layer) {
  std::string msg = "matrix is not positive definite at pivot " + std::to_string(pivot);
  if (layer >= 0) msg += " (layer " + std::to_string(layer) + ")";
  return msg;
}
}  // namespace

NotPositiveDefiniteError::NotPositiveDefiniteError(std::size_t pivot, long layer)
    : Error(ErrorCode::kNotPositiveDefinite, pivot_message(pivot, layer)),
      pivot_(pivot),
      layer_(layer) {}

DivergenceError::DivergenceError(long step)
    : Error(ErrorCode::kDivergence,
            "training diverged: non-finite loss at step " + std::to_string(step)),
      step_(step) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace moeup
