// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace moeup {

/// Process-wide instrumentation. Take a snapshot before and after a call and
/// compare the deltas.
struct CostSnapshot {
  std::uint64_t forward_passes = 0;   // model forwards over one batch
  std::uint64_t backward_passes = 0;  // reverse passes over one batch
  std::uint64_t router_reads = 0;     // per-layer router matrix evaluations

  CostSnapshot operator-(const CostSnapshot& o) const {
    return {forward_passes - o.forward_passes, backward_passes - o.backward_passes,
            router_reads - o.router_reads};
  }
};

CostSnapshot cost_snapshot();

namespace detail {
void count_forward();
void count_backward();
void count_router_read();
}  // namespace detail

}  // namespace moeup
