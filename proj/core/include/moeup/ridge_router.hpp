// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeup/corpus.hpp"
#include "moeup/model.hpp"
#include "moeup/moe.hpp"
#include "moeup/numerics.hpp"

namespace moeup {

inline constexpr double kDefaultLambda = 0.01;

/// Per-layer sufficient statistics A_l = sum F^T F (H x H) and
/// b_l = sum F^T Y (H x D) of the pre-MLP features F, with Y one-hot in the
/// batch domain. Additive across batches and shards.
struct RidgeStats {
  std::vector<Matrix> a;                  // [layer] H x H
  std::vector<Matrix> b;                  // [layer] H x D
  std::vector<std::uint64_t> token_count; // [domain]
  std::vector<std::string> domain_names;

  std::size_t num_layers() const { return a.size(); }
  std::size_t hidden() const { return a.empty() ? 0 : a[0].rows(); }
  std::size_t num_domains() const { return token_count.size(); }

  friend bool operator==(const RidgeStats&, const RidgeStats&) = default;
};

struct RouterSolution {
  std::vector<Matrix> routers;  // [layer] H x D
  double lambda = kDefaultLambda;
  bool normalized = true;
};

RidgeStats new_stats(const ModelConfig& config, std::size_t num_domains,
                     std::vector<std::string> domain_names = {});

/// Adds the rows of `features` (one H-wide float row each) as tokens of
/// `domain` to layer `layer`.
void accumulate_features(RidgeStats& stats, std::size_t layer, int domain,
                         std::span<const float> features, std::size_t rows);

/// One forward of `batch` under domain-deterministic routing; the pre-MLP
/// features of every real token (at most `max_tokens` per sequence, counted
/// from the front) are added to every layer's statistics.
void accumulate(RidgeStats& stats, const MoEModel& moe, const Batch& batch,
                std::optional<std::size_t> max_tokens = std::nullopt);

RidgeStats merge_stats(const RidgeStats& a, const RidgeStats& b);

/// Scales every nonzero column to unit norm. Columns already within a few ulp
/// of unit norm are left alone, so the operation is idempotent bit for bit.
void normalize_columns(Matrix& w);

/// W_l = (A_l + lambda I)^-1 b_l per layer. A failed factorization is
/// rethrown as NotPositiveDefiniteError carrying the layer index.
RouterSolution solve_routers(const RidgeStats& stats, double lambda = kDefaultLambda,
                             bool normalize = true);

struct RidgeFitOptions {
  double lambda = kDefaultLambda;
  std::optional<std::size_t> max_tokens;
  bool normalize = true;
  std::size_t batch_size = 8;
  std::size_t seq_len = 128;
  Split split = Split::kTrain;
};

struct RidgeFitResult {
  MoEModel moe;
  RidgeStats stats;
  RouterSolution solution;
  std::size_t batches = 0;  // statistics batches forwarded
};

/// Gathers statistics with one forward per batch of each corpus (corpus d is
/// domain d), solves, and installs the routers.
RidgeFitResult fit_routers_pipeline(MoEModel moe, std::span<const DomainCorpus> corpora,
                                    const RidgeFitOptions& options = {});

struct AddDomainOptions {
  RidgeFitOptions fit;
  /// Keep the current trunk instead of re-averaging it with the new expert.
  bool pin_trunk = false;
};

struct AddDomainResult {
  MoEModel moe;
  RidgeStats stats;
  RouterSolution solution;
};

/// Appends `new_expert` as expert D, accumulates statistics of the new corpus
/// only, and re-solves every router. Old statistics are reused as they are.
AddDomainResult add_domain(const RidgeStats& stats, const MoEModel& moe,
                           const ModelParams& new_expert, const DomainCorpus& new_corpus,
                           const AddDomainOptions& options = {});

inline constexpr char kStatsMagic[7] = {'R', 'S', 'T', 'A', 'T', '1', '\0'};
inline constexpr int kStatsVersion = 1;

void save_stats(const RidgeStats& stats, const std::filesystem::path& path,
                const std::string& config_hash = "");

struct LoadedStats {
  RidgeStats stats;
  std::string config_hash;
};

LoadedStats load_stats(const std::filesystem::path& path);

}  // namespace moeup
