// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "moeup/model.hpp"
#include "moeup/numerics.hpp"

namespace moeup {

/// Merged model: averaged trunk, per-layer expert banks, per-layer routers.
struct MoEModel {
  ModelConfig config;
  Trunk<float> trunk;
  std::vector<std::vector<MlpBlock<float>>> experts;  // [layer][expert]
  std::vector<Matrix> routers;                        // [layer], H x D; empty when uninitialized
  int top_k = 1;
  std::vector<std::string> domain_names;

  int num_experts() const { return experts.empty() ? 0 : static_cast<int>(experts[0].size()); }
  bool routers_initialized() const { return !routers.empty(); }
  /// Checks the structural invariants; throws on violation.
  void validate() const;
};

struct RoutingPolicy {
  enum class Kind { kLearned, kOracle, kRandom, kDeterministicDomain };

  Kind kind = Kind::kLearned;
  int top_k = 0;           // learned only; 0 means the model's top_k
  std::uint64_t seed = 0;  // random only

  static RoutingPolicy learned(int top_k = 0) { return {Kind::kLearned, top_k, 0}; }
  static RoutingPolicy oracle() { return {Kind::kOracle, 1, 0}; }
  static RoutingPolicy random(std::uint64_t seed) { return {Kind::kRandom, 1, seed}; }
  static RoutingPolicy deterministic_domain() { return {Kind::kDeterministicDomain, 1, 0}; }
};

const char* to_string(RoutingPolicy::Kind kind);

/// Routing decisions for the real (non-pad) tokens of one batch.
struct RoutingRecord {
  struct Layer {
    std::vector<std::uint32_t> row;
    std::vector<std::uint32_t> position;
    std::vector<int> experts;    // top_k per token, highest gate first
    std::vector<double> gates;   // parallel to experts

    std::size_t tokens() const { return row.size(); }
  };

  int top_k = 1;
  std::vector<Layer> layers;

  /// Fraction of tokens at `layer` whose first-choice expert equals `expert`.
  double accuracy(std::size_t layer, int expert) const;
  /// Correct / total first choices at `layer` (for pooling across batches).
  std::pair<std::size_t, std::size_t> hits(std::size_t layer, int expert) const;

  /// One JSON object per selected expert:
  /// {"layer","row","position","expert_id","gate"}.
  void write_jsonl(std::ostream& out) const;
};

struct MoEForward {
  ForwardTrace trace;
  RoutingRecord routing;
};

/// Element-wise mean of every non-MLP tensor. Throws on name/shape mismatch.
Trunk<float> average_trunk(std::span<const ModelParams> experts);

/// Element-wise mean of every tensor, MLPs included (the plain averaging baseline).
ModelParams average_models(std::span<const ModelParams> experts);

struct UninitializedRouters {};
struct RandomRouters {
  std::uint64_t seed = 0;
  double stddev = 0.02;
};
using RouterInit = std::variant<UninitializedRouters, RandomRouters, std::vector<Matrix>>;

std::vector<Matrix> random_routers(const ModelConfig& config, int num_experts,
                                   std::uint64_t seed, double stddev = 0.02);

MoEModel assemble_moe(std::span<const ModelParams> experts, const ModelConfig& config,
                      const RouterInit& routers, int top_k,
                      std::vector<std::string> domain_names = {});

/// Replaces all routers; each must be H x D.
void install_routers(MoEModel& moe, std::vector<Matrix> routers);

MoEForward moe_forward(const MoEModel& moe, const Batch& batch, const RoutingPolicy& policy,
                       bool capture = false);

struct ParamCounts {
  std::size_t total = 0;
  std::size_t active_per_token = 0;
  std::size_t router = 0;
};

ParamCounts count_active_params(const MoEModel& moe, int top_k);

// MoE files reuse the checkpoint container; routers are stored as f64.
void save_moe(const MoEModel& moe, const std::filesystem::path& path,
              const std::string& config_hash = "");

struct LoadedMoE {
  MoEModel moe;
  std::string config_hash;
};

LoadedMoE load_moe(const std::filesystem::path& path);

}  // namespace moeup
