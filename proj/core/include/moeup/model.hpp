// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "moeup/corpus.hpp"
#include "moeup/numerics.hpp"

namespace moeup {

struct ModelConfig {
  int vocab_size = kByteVocabSize;
  int hidden_size = 64;
  int n_layers = 4;
  int n_heads = 4;
  int mlp_hidden = 256;
  int max_seq_len = 128;
  int pad_id = kPadId;

  int head_dim() const { return hidden_size / n_heads; }
  /// Throws kConfigError when a field is non-positive or H % heads != 0.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T(0));

  std::size_t size() const noexcept { return values.size(); }
  T* data() noexcept { return values.data(); }
  const T* data() const noexcept { return values.data(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Non-MLP tensors of one transformer block.
template <class T>
struct AttentionBlock {
  Tensor<T> attention_norm;  // [H]
  Tensor<T> wq, wk, wv, wo;  // [H, H], y = x W
  Tensor<T> ffn_norm;        // [H], applied right before the MLP

  friend bool operator==(const AttentionBlock&, const AttentionBlock&) = default;
};

/// SiLU-gated MLP: down(silu(x W_gate) * (x W_up)).
template <class T>
struct MlpBlock {
  Tensor<T> w_gate;  // [H, F]
  Tensor<T> w_up;    // [H, F]
  Tensor<T> w_down;  // [F, H]

  friend bool operator==(const MlpBlock&, const MlpBlock&) = default;
};

/// Every parameter that is not part of an MLP.
template <class T>
struct Trunk {
  Tensor<T> tok_embeddings;  // [V, H]
  std::vector<AttentionBlock<T>> layers;
  Tensor<T> norm;    // [H]
  Tensor<T> output;  // [H, V]

  friend bool operator==(const Trunk&, const Trunk&) = default;
};

template <class T>
struct BasicParams {
  Trunk<T> trunk;
  std::vector<MlpBlock<T>> mlps;  // one per layer

  friend bool operator==(const BasicParams&, const BasicParams&) = default;
};

using ModelParams = BasicParams<float>;

enum class ParamGroup { kMlp, kNonMlp };

/// Visits the trunk tensors in checkpoint order: f(name, tensor).
template <class TrunkT, class F>
void visit_trunk(TrunkT& trunk, F&& f, const std::string& prefix = "") {
  f(prefix + "tok_embeddings", trunk.tok_embeddings);
  for (std::size_t l = 0; l < trunk.layers.size(); ++l) {
    auto& blk = trunk.layers[l];
    const std::string p = prefix + "layers." + std::to_string(l) + ".";
    f(p + "attention_norm", blk.attention_norm);
    f(p + "attention.wq", blk.wq);
    f(p + "attention.wk", blk.wk);
    f(p + "attention.wv", blk.wv);
    f(p + "attention.wo", blk.wo);
    f(p + "ffn_norm", blk.ffn_norm);
  }
  f(prefix + "norm", trunk.norm);
  f(prefix + "output", trunk.output);
}

template <class MlpT, class F>
void visit_mlp(MlpT& mlp, F&& f, const std::string& prefix) {
  f(prefix + "feed_forward.w_gate", mlp.w_gate);
  f(prefix + "feed_forward.w_up", mlp.w_up);
  f(prefix + "feed_forward.w_down", mlp.w_down);
}

/// Visits every tensor of a dense model: f(name, tensor, group).
template <class ParamsT, class F>
void visit_params(ParamsT& params, F&& f) {
  visit_trunk(params.trunk, [&](const std::string& name, auto& t) { f(name, t, ParamGroup::kNonMlp); });
  for (std::size_t l = 0; l < params.mlps.size(); ++l) {
    visit_mlp(params.mlps[l],
              [&](const std::string& name, auto& t) { f(name, t, ParamGroup::kMlp); },
              "layers." + std::to_string(l) + ".");
  }
}

template <class T>
BasicParams<T> init_params_as(const ModelConfig& config, std::uint64_t seed);

/// Normal(0, 0.02) weights, output projections (wo, w_down) scaled by
/// 1/sqrt(2L), unit norm weights.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Same-shaped parameter set filled with zeros.
template <class T>
BasicParams<T> zeros_like(const ModelConfig& config);

template <class U, class T>
BasicParams<U> cast_params(const BasicParams<T>& p) {
  BasicParams<U> out;
  out.trunk.layers.resize(p.trunk.layers.size());
  out.mlps.resize(p.mlps.size());
  auto copy = [](const Tensor<T>& src, Tensor<U>& dst) {
    dst.shape = src.shape;
    dst.values.assign(src.values.begin(), src.values.end());
  };
  copy(p.trunk.tok_embeddings, out.trunk.tok_embeddings);
  for (std::size_t l = 0; l < p.trunk.layers.size(); ++l) {
    const auto& a = p.trunk.layers[l];
    auto& b = out.trunk.layers[l];
    copy(a.attention_norm, b.attention_norm);
    copy(a.wq, b.wq);
    copy(a.wk, b.wk);
    copy(a.wv, b.wv);
    copy(a.wo, b.wo);
    copy(a.ffn_norm, b.ffn_norm);
    copy(p.mlps[l].w_gate, out.mlps[l].w_gate);
    copy(p.mlps[l].w_up, out.mlps[l].w_up);
    copy(p.mlps[l].w_down, out.mlps[l].w_down);
  }
  copy(p.trunk.norm, out.trunk.norm);
  copy(p.trunk.output, out.trunk.output);
  return out;
}

/// Total scalar parameter count of a dense model.
std::size_t count_params(const ModelParams& params);

/// Checks tensor shapes against `config`; throws kShapeMismatch.
template <class T>
void check_shapes(const BasicParams<T>& params, const ModelConfig& config);

struct ForwardTrace {
  std::vector<Tensor3> features;  // per layer, B x T x H, input of the MLP block
  Tensor3 logits;                 // B x T x V
  double loss_sum = 0.0;          // summed next-token cross-entropy over valid positions
  std::size_t loss_tokens = 0;

  /// Mean loss; 0 when the batch has no valid next-token positions.
  double loss() const { return loss_tokens == 0 ? 0.0 : loss_sum / double(loss_tokens); }
};

ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                     bool capture = false);

/// Mean next-token cross-entropy over positions t whose successor t+1 is a
/// real token. Throws kInvalidArgument when there is none.
double lm_loss(const Tensor3& logits, const Batch& batch);

/// (sum of cross-entropies, number of positions), no throwing on empty.
std::pair<double, std::size_t> lm_loss_sum(const Tensor3& logits, const Batch& batch);

// Container layout shared by every model file: magic, u64 little-endian JSON
// header length, JSON header, then raw little-endian tensor payloads.
inline constexpr char kCheckpointMagic[7] = {'M', 'O', 'E', 'U', 'P', '1', '\0'};
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path, const std::string& config_hash = "");

struct LoadedCheckpoint {
  ModelParams params;
  ModelConfig config;
  std::string config_hash;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the stored config equals `expected` (kShapeMismatch otherwise).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace moeup
