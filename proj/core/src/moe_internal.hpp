// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "engine.hpp"
#include "moeup/moe.hpp"

namespace moeup::detail_moe {

engine::NetView<float> moe_view(const MoEModel& moe);
engine::RouteSpec route_spec(const MoEModel& moe, const Batch& batch, const RoutingPolicy& p);
RoutingRecord routing_record(const engine::Cache<float>& c, const Batch& batch);

}  // namespace moeup::detail_moe
