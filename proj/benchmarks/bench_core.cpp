// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "moeup/moe.hpp"
#include "moeup/numerics.hpp"
#include "moeup/ridge_router.hpp"
#include "moeup/rng.hpp"
#include "moeup/trainer.hpp"

namespace moeup {
namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

Batch random_batch(std::size_t rows, std::size_t seq, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.batch_size = rows;
  b.seq_len = seq;
  for (std::size_t i = 0; i < rows * seq; ++i) {
    b.tokens.push_back(static_cast<int>(rng.below(256)));
    b.mask.push_back(1);
  }
  return b;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_SolveSpd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(2 * n, n, 3);
  const Matrix a = matmul(x.transpose(), x);
  const Matrix b = random_matrix(n, 5, 4);
  for (auto _ : state) benchmark::DoNotOptimize(solve_spd(a, b, 0.01));
}
BENCHMARK(BM_SolveSpd)->Arg(64)->Arg(256)->Arg(1024);

void BM_AccumulateGram(benchmark::State& state) {
  const std::size_t h = static_cast<std::size_t>(state.range(0)), rows = 1024;
  Rng rng(5);
  std::vector<float> features(rows * h);
  for (auto& v : features) v = static_cast<float>(rng.normal());
  Matrix gram(h, h);
  for (auto _ : state) {
    accumulate_gram(gram, features, rows);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_AccumulateGram)->Arg(64)->Arg(256);

ModelConfig desk_config() { return ModelConfig{}; }

void BM_DenseForward(benchmark::State& state) {
  const ModelConfig c = desk_config();
  const ModelParams p = init_params(c, 1);
  const Batch b = random_batch(8, 128, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, c, b));
  state.SetItemsProcessed(state.iterations() * 8 * 128);
}
BENCHMARK(BM_DenseForward)->Unit(benchmark::kMillisecond);

void BM_DenseGradients(benchmark::State& state) {
  const ModelConfig c = desk_config();
  const ModelParams p = init_params(c, 1);
  const Batch b = random_batch(8, 128, 2);
  for (auto _ : state) benchmark::DoNotOptimize(compute_gradients(p, c, b));
  state.SetItemsProcessed(state.iterations() * 8 * 128);
}
BENCHMARK(BM_DenseGradients)->Unit(benchmark::kMillisecond);

void BM_MoEForwardLearned(benchmark::State& state) {
  const ModelConfig c = desk_config();
  std::vector<ModelParams> experts;
  for (int d = 0; d < 5; ++d) experts.push_back(init_params(c, 10 + d));
  const MoEModel moe = assemble_moe(experts, c, RandomRouters{1}, static_cast<int>(state.range(0)));
  const Batch b = random_batch(8, 128, 3);
  for (auto _ : state) benchmark::DoNotOptimize(moe_forward(moe, b, RoutingPolicy::learned()));
  state.SetItemsProcessed(state.iterations() * 8 * 128);
}
BENCHMARK(BM_MoEForwardLearned)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_RidgeAccumulate(benchmark::State& state) {
  const ModelConfig c = desk_config();
  std::vector<ModelParams> experts;
  for (int d = 0; d < 5; ++d) experts.push_back(init_params(c, 10 + d));
  const MoEModel moe = assemble_moe(experts, c, UninitializedRouters{}, 1);
  const Batch b = random_batch(8, 128, 4);
  RidgeStats stats = new_stats(c, 5);
  for (auto _ : state) accumulate(stats, moe, b);
  state.SetItemsProcessed(state.iterations() * 8 * 128);
}
BENCHMARK(BM_RidgeAccumulate)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace moeup

BENCHMARK_MAIN();
