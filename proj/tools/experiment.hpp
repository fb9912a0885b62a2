// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeup/corpus.hpp"
#include "moeup/eval_harness.hpp"
#include "moeup/model.hpp"
#include "moeup/trainer.hpp"

namespace moeup::cli {

/// One experiment, read from a JSON file plus `key.path=value` overrides.
struct ExperimentConfig {
  ModelConfig model;
  std::uint64_t corpus_seed = 7;
  std::vector<DomainSpec> domains;
  std::vector<DomainSpec> extra_domains;  // candidates for add-domain

  TrainConfig pretrain;
  TrainConfig expert;
  TrainConfig rome_plus;
  TrainConfig btx;

  double lambda = kDefaultLambda;
  int top_k = 1;
  int btx_top_k = 2;
  std::optional<std::size_t> max_tokens;
  bool normalize = true;
  std::size_t stats_batch_size = 8;
  std::size_t stats_seq_len = 128;

  std::vector<std::uint64_t> seeds = {1, 2, 3};
  EvalOptions eval;
  std::filesystem::path output_dir = "runs/default";

  nlohmann::json canonical;  // the merged document the fields were read from

  /// Hash of the sections that determine the trained weights (model, corpus,
  /// pretrain, expert). Embedded in every artifact.
  std::string lineage_hash() const;

  RidgeFitOptions ridge_options() const;
  LadderOptions ladder_options() const;

  std::filesystem::path seed_path() const { return output_dir / "seed.ckpt"; }
  std::filesystem::path expert_path(const std::string& domain) const {
    return output_dir / "experts" / (domain + ".ckpt");
  }
  std::filesystem::path merged_path() const { return output_dir / "moe_merged.ckpt"; }
  std::filesystem::path rome_path() const { return output_dir / "moe_rome.ckpt"; }
  std::filesystem::path stats_path() const { return output_dir / "ridge.stats"; }
};

/// Applies one override. `path` is dot-separated; `value` is parsed as JSON
/// and falls back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Throws kConfigError (bad JSON, bad values) or kMissingArtifact (file
/// missing).
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {});
ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir);

std::string fnv1a_hex(const std::string& text);

}  // namespace moeup::cli
