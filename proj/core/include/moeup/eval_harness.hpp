// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeup/corpus.hpp"
#include "moeup/counters.hpp"
#include "moeup/model.hpp"
#include "moeup/moe.hpp"
#include "moeup/ridge_router.hpp"
#include "moeup/trainer.hpp"

namespace moeup {

struct EvalOptions {
  std::size_t batch_size = 8;
  std::size_t seq_len = 128;
  Split split = Split::kTest;
};

/// exp of the token-weighted mean next-token loss over one split.
/// Throws kEmptySplit when the split has no sequences.
double eval_perplexity(const ModelParams& params, const ModelConfig& config,
                       const DomainCorpus& corpus, const EvalOptions& options = {});

struct MoEEval {
  double perplexity = 0.0;
  /// Per layer: real tokens whose first choice is the corpus domain, and total.
  std::vector<std::pair<std::size_t, std::size_t>> routing_hits;
};

MoEEval eval_moe(const MoEModel& moe, const DomainCorpus& corpus, const RoutingPolicy& policy,
                 const EvalOptions& options = {});

double eval_perplexity(const MoEModel& moe, const DomainCorpus& corpus,
                       const RoutingPolicy& policy, const EvalOptions& options = {});

/// Per-layer routing accuracy against the domain labels, pooled over corpora
/// (corpus d is labelled d).
std::vector<double> routing_accuracy(const MoEModel& moe, std::span<const DomainCorpus> corpora,
                                     const RoutingPolicy& policy, const EvalOptions& options = {});

struct NormalizedScores {
  std::vector<double> per_domain;  // 100 * p_hat_d / p_d
  double average = 0.0;
};

/// Throws kInvalidArgument on a size mismatch or any non-positive value.
NormalizedScores normalized_score(std::span<const double> perplexity,
                                  std::span<const double> reference);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

/// One ladder row evaluated over every seed.
struct MethodResult {
  std::string method;
  std::vector<std::vector<double>> perplexity;  // [seed][domain]
  std::vector<std::vector<double>> score;       // [seed][domain]
  std::vector<double> average;                  // [seed]
  MeanStd summary;
  std::vector<double> routing_accuracy;         // [layer], mean over seeds; empty for dense rows
  CostSnapshot cost;                            // summed over seeds, fitting included
  double wall_seconds = 0.0;
};

struct EvalReport {
  std::vector<std::string> domain_names;
  std::vector<double> reference;                // p_hat_d
  std::vector<std::vector<double>> expert_grid; // [expert][domain] perplexity
  std::vector<std::uint64_t> seeds;
  std::vector<MethodResult> methods;

  const MethodResult* find(const std::string& method) const;
  const MethodResult& at(const std::string& method) const;

  void write_tsv(std::ostream& out) const;
  void write_json(std::ostream& out) const;
};

struct LadderOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  EvalOptions eval;
  RidgeFitOptions ridge;
  int rome_top_k = 1;
  int btx_top_k = 2;
  TrainConfig btx;        // router finetuning from random init
  TrainConfig rome_plus;  // router finetuning from the ridge solution
  double random_router_stddev = 0.02;
  /// Skip the rows that need router finetuning.
  bool skip_finetuned = false;
};

/// Method names used in the report.
namespace ladder {
inline constexpr const char* kAveraging = "model_averaging";
inline constexpr const char* kOracle = "oracle";
inline constexpr const char* kRandom = "random_routing";
inline constexpr const char* kBtx = "btx";
inline constexpr const char* kRome = "rome";
inline constexpr const char* kRomePlus = "rome_plus";
std::string expert_row(const std::string& domain);
}  // namespace ladder

/// Evaluates the dense experts, plain averaging, and every routed variant of
/// the merged model. `experts[d]` is the expert of `corpora[d]`.
EvalReport run_ladder(const ModelConfig& config, std::span<const ModelParams> experts,
                      std::span<const DomainCorpus> corpora, const LadderOptions& options);

enum class SweepAxis { kLambda, kTopK, kMaxTokens };

SweepAxis parse_sweep_axis(const std::string& name);
const char* to_string(SweepAxis axis);

struct SweepPoint {
  double x = 0.0;        // max_tokens 0 stands for unlimited
  MeanStd score;
  std::vector<double> per_seed;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::kLambda;
  std::vector<SweepPoint> points;

  void write_csv(std::ostream& out) const;
};

/// Normalized score of the ridge-fitted merged model as one knob varies. The
/// fit has no random state, so each point is computed once (per_seed holds a
/// single value and std is 0).
SweepResult run_sweep(const ModelConfig& config, std::span<const ModelParams> experts,
                      std::span<const DomainCorpus> corpora, SweepAxis axis,
                      std::span<const double> values, const LadderOptions& options);

}  // namespace moeup
