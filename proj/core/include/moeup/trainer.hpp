// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "moeup/corpus.hpp"
#include "moeup/model.hpp"
#include "moeup/moe.hpp"

namespace moeup {

enum class Trainable { kAll, kRoutersOnly };

struct TrainConfig {
  double learning_rate = 6e-4;
  long warmup_steps = 100;
  long total_steps = 2000;
  std::size_t batch_size = 8;
  std::size_t seq_len = 128;
  int grad_accum = 1;
  std::uint64_t seed = 0;
  double min_lr_fraction = 0.1;  // cosine floor as a fraction of learning_rate
  double grad_clip = 1.0;        // global L2 norm; <= 0 disables
  Trainable trainable = Trainable::kAll;

  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Linear warmup to learning_rate over warmup_steps, then cosine decay to
/// learning_rate * min_lr_fraction at total_steps.
double lr_at(const TrainConfig& config, long step);

struct LossPoint {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

void write_loss_csv(std::ostream& out, std::span<const LossPoint> history);

template <class T>
struct GradientResult {
  double loss = 0.0;         // mean next-token loss of the batch
  std::size_t tokens = 0;    // positions contributing to the loss
  BasicParams<T> grads;
};

/// Gradient of the mean next-token loss w.r.t. every parameter. Throws
/// kNonFinite naming the first offending tensor.
template <class T>
GradientResult<T> compute_gradients(const BasicParams<T>& params, const ModelConfig& config,
                                    const Batch& batch);

/// Mean next-token loss, evaluated in precision T.
template <class T>
double batch_loss(const BasicParams<T>& params, const ModelConfig& config, const Batch& batch);

struct RouterGradients {
  double loss = 0.0;
  std::vector<Matrix> routers;
};

/// Gradient of the MoE loss w.r.t. the routers only, under learned routing.
RouterGradients router_gradients(const MoEModel& moe, const Batch& batch, int top_k = 0);

struct TrainResult {
  ModelParams params;
  std::vector<LossPoint> history;
};

using ProgressFn = std::function<void(const LossPoint&)>;

/// Adam on all parameters over batches drawn from the train splits of
/// `corpora` (interleaved, reshuffled every epoch).
TrainResult train(ModelParams params, const ModelConfig& model_config,
                  std::span<const DomainCorpus> corpora, const TrainConfig& config,
                  const ProgressFn& progress = {});

struct RouterFinetuneResult {
  MoEModel moe;
  std::vector<LossPoint> history;
};

/// Router-only training of an assembled MoE on the mixed domains; trunk and
/// experts are untouched. Requires config.trainable == kRoutersOnly.
RouterFinetuneResult finetune_routers(MoEModel moe, std::span<const DomainCorpus> corpora,
                                      const TrainConfig& config, const ProgressFn& progress = {});

}  // namespace moeup
