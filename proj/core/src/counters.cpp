// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/counters.hpp"

#include <atomic>

namespace moeup {

namespace {
std::atomic<std::uint64_t> g_forward{0};
std::atomic<std::uint64_t> g_backward{0};
std::atomic<std::uint64_t> g_router{0};
}  // namespace

CostSnapshot cost_snapshot() {
  return {g_forward.load(std::memory_order_relaxed), g_backward.load(std::memory_order_relaxed),
          g_router.load(std::memory_order_relaxed)};
}

namespace detail {
void count_forward() { g_forward.fetch_add(1, std::memory_order_relaxed); }
void count_backward() { g_backward.fetch_add(1, std::memory_order_relaxed); }
void count_router_read() { g_router.fetch_add(1, std::memory_order_relaxed); }
}  // namespace detail

}  // namespace moeup
