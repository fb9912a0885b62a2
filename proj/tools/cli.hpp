// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "moeup/error.hpp"

namespace moeup::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitNumerical = 4,
  kExitDivergence = 5,
};

int exit_code_for(ErrorCode code);

/// Worker count for parallel commands, from MOEUP_THREADS (default 1).
unsigned thread_count();

/// Runs `moeup <command> ...`; args excludes the program name. Results go to
/// `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moeup::cli
