// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "engine.hpp"
#include "moeup/error.hpp"
#include "moeup/trainer.hpp"
#include "support.hpp"

namespace moeup {
namespace {

using testing::random_batch;
using testing::synthetic_corpora;
using testing::tiny_config;

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

template <class P, class F>
void for_each_tensor(P& p, F&& f) {
  visit_params(p, [&](const std::string& name, auto& t, ParamGroup) { f(name, t); });
}

TEST(Gradients, MatchCentralDifferencesInDouble) {
  const ModelConfig c = tiny_config(8, 2, 2, 16, 12);
  auto params = init_params_as<double>(c, 3);
  // Larger weights than the init so every tensor has a measurable slope.
  for_each_tensor(params, [](const std::string&, Tensor<double>& t) {
    for (auto& v : t.values) v *= 10.0;
  });
  const Batch batch = random_batch(2, 12, 5, 0, 2);
  const auto g = compute_gradients(params, c, batch);

  Rng rng(17);
  const double eps = 1e-4;
  std::vector<const Tensor<double>*> grads;
  for_each_tensor(g.grads, [&](const std::string&, const Tensor<double>& t) { grads.push_back(&t); });
  std::size_t checked = 0, idx = 0;
  for_each_tensor(params, [&](const std::string& name, Tensor<double>& t) {
    const Tensor<double>& gt = *grads[idx++];
    for (int trial = 0; trial < 6; ++trial) {
      std::size_t i = rng.below(t.size());
      if (name == "tok_embeddings") i = (rng.below(256) * c.hidden_size) + rng.below(c.hidden_size);
      const double saved = t.values[i];
      t.values[i] = saved + eps;
      const double up = batch_loss(params, c, batch);
      t.values[i] = saved - eps;
      const double down = batch_loss(params, c, batch);
      t.values[i] = saved;
      const double fd = (up - down) / (2 * eps);
      if (std::abs(fd) < 1e-7 && std::abs(gt.values[i]) < 1e-7) continue;
      EXPECT_LT(rel_error(fd, gt.values[i]), 1e-3) << name << "[" << i << "]";
      ++checked;
    }
  });
  EXPECT_GT(checked, 40u);
}

TEST(Gradients, PadEmbeddingRowIsZero) {
  const ModelConfig c = tiny_config();
  const auto g = compute_gradients(init_params_as<double>(c, 1), c, random_batch(3, 10, 2, 0, 4));
  const std::size_t h = c.hidden_size;
  for (std::size_t j = 0; j < h; ++j) EXPECT_EQ(g.grads.trunk.tok_embeddings.values[kPadId * h + j], 0.0);
}

TEST(Gradients, DuplicatedBatchGivesSameMeanGradient) {
  const ModelConfig c = tiny_config();
  const auto p = init_params_as<double>(c, 4);
  const Batch one = random_batch(1, 10, 6);
  Batch two = one;
  two.batch_size = 2;
  two.tokens.insert(two.tokens.end(), one.tokens.begin(), one.tokens.end());
  two.mask.insert(two.mask.end(), one.mask.begin(), one.mask.end());
  const auto a = compute_gradients(p, c, one), b = compute_gradients(p, c, two);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  EXPECT_EQ(2 * a.tokens, b.tokens);
  std::vector<const Tensor<double>*> ta;
  for_each_tensor(a.grads, [&](const std::string&, const Tensor<double>& t) { ta.push_back(&t); });
  std::size_t k = 0;
  for_each_tensor(b.grads, [&](const std::string& name, const Tensor<double>& t) {
    const auto& u = *ta[k++];
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_NEAR(t.values[i], u.values[i], 1e-10) << name;
  });
}

TEST(Schedule, WarmupAndCosine) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.warmup_steps = 10;
  t.total_steps = 110;
  t.min_lr_fraction = 0.1;
  EXPECT_NEAR(lr_at(t, 0), 1e-4, 1e-12);
  EXPECT_NEAR(lr_at(t, 9), 1e-3, 1e-12);
  EXPECT_NEAR(lr_at(t, 10), 1e-3, 1e-12);
  EXPECT_NEAR(lr_at(t, 60), 1e-4 + 0.9e-3 * 0.5, 1e-12);
  EXPECT_NEAR(lr_at(t, 35), 1e-4 + 0.9e-3 * 0.5 * (1 + std::cos(std::numbers::pi * 0.25)), 1e-12);
  EXPECT_NEAR(lr_at(t, 110), 1e-4, 1e-12);
  for (long s = 10; s < 110; ++s) EXPECT_LE(lr_at(t, s + 1), lr_at(t, s) + 1e-15);
}

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig t;
  t.learning_rate = -1;
  EXPECT_THROW(t.validate(), Error);
  t = TrainConfig{};
  t.grad_accum = 0;
  EXPECT_THROW(t.validate(), Error);
}

TrainConfig quick(long steps, double lr = 3e-3) {
  TrainConfig t;
  t.learning_rate = lr;
  t.warmup_steps = std::min(5L, steps);
  t.total_steps = steps;
  t.batch_size = 4;
  t.seq_len = 32;
  t.seed = 9;
  return t;
}

TEST(Train, ZeroStepsReturnsInputUnchanged) {
  const ModelConfig c = tiny_config(8, 2, 2, 16, 32);
  const auto p = init_params(c, 2);
  const auto corpora = synthetic_corpora(2, 30, 1);
  const auto r = train(p, c, corpora, quick(0));
  EXPECT_EQ(r.params, p);
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, DeterministicAndLossDecreases) {
  const ModelConfig c = tiny_config(16, 2, 2, 32, 32);
  const auto corpora = synthetic_corpora(1, 80, 3);
  const auto a = train(init_params(c, 2), c, corpora, quick(80));
  const auto b = train(init_params(c, 2), c, corpora, quick(80));
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), 80u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += a.history[i].loss;
    tail += a.history[70 + i].loss;
  }
  EXPECT_LT(tail, head * 0.8);
  std::ostringstream csv;
  write_loss_csv(csv, a.history);
  EXPECT_EQ(csv.str().rfind("step,lr,loss\n", 0), 0u);
}

TEST(Train, DivergenceIsReported) {
  const ModelConfig c = tiny_config(8, 2, 2, 16, 32);
  auto cfg = quick(50, 1e30);
  cfg.grad_clip = 0.0;
  cfg.warmup_steps = 0;
  try {
    train(init_params(c, 2), c, synthetic_corpora(1, 30, 1), cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
    EXPECT_GE(e.step(), 0);
  } catch (const Error& e) {
    // A blown-up weight may be caught by the finiteness check first.
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

MoEModel small_moe(const ModelConfig& c, int top_k, double router_std = 0.02) {
  std::vector<ModelParams> experts;
  for (int d = 0; d < 3; ++d) experts.push_back(init_params(c, 40 + d));
  return assemble_moe(experts, c, RandomRouters{5, router_std}, top_k);
}

TEST(FinetuneRouters, OnlyRoutersMove) {
  const ModelConfig c = tiny_config(8, 2, 2, 16, 32);
  const MoEModel moe = small_moe(c, 2);
  auto cfg = quick(5, 1e-2);
  cfg.trainable = Trainable::kRoutersOnly;
  const auto r = finetune_routers(moe, synthetic_corpora(3, 30, 2), cfg);
  EXPECT_EQ(r.moe.trunk, moe.trunk);
  EXPECT_EQ(r.moe.experts, moe.experts);
  ASSERT_EQ(r.moe.routers.size(), moe.routers.size());
  bool moved = false;
  for (std::size_t l = 0; l < moe.routers.size(); ++l) {
    const auto a = r.moe.routers[l].values(), b = moe.routers[l].values();
    for (std::size_t i = 0; i < a.size(); ++i) moved |= a[i] != b[i];
  }
  EXPECT_TRUE(moved);
  EXPECT_EQ(r.history.size(), 5u);
}

TEST(FinetuneRouters, PreconditionsAreChecked) {
  const ModelConfig c = tiny_config(8, 2, 2, 16, 32);
  const auto corpora = synthetic_corpora(3, 30, 2);
  auto cfg = quick(2);
  EXPECT_THROW(finetune_routers(small_moe(c, 1), corpora, cfg), Error);  // kAll
  cfg.trainable = Trainable::kRoutersOnly;
  std::vector<ModelParams> experts{init_params(c, 1), init_params(c, 2)};
  EXPECT_THROW(finetune_routers(assemble_moe(experts, c, UninitializedRouters{}, 1), corpora, cfg),
               Error);
  cfg.trainable = Trainable::kRoutersOnly;
  EXPECT_THROW(train(init_params(c, 1), c, corpora, cfg), Error);
}

// Learned top-2 routing run entirely in double, so central differences on the
// router weights are accurate.
struct DoubleMoE {
  ModelConfig config;
  std::vector<BasicParams<double>> experts;
  std::vector<Matrix> routers;

  engine::NetView<double> view() const {
    engine::NetView<double> v;
    v.config = &config;
    v.trunk = &experts[0].trunk;
    v.experts.resize(config.n_layers);
    for (int l = 0; l < config.n_layers; ++l)
      for (const auto& e : experts) v.experts[l].push_back(&e.mlps[l]);
    v.routers = &routers;
    return v;
  }

  double loss(const Batch& b, int k) const {
    const auto cache = engine::forward(view(), b, engine::RouteSpec{RoutingPolicy::Kind::kLearned, k, 0, 0});
    const auto [sum, n] = engine::next_token_loss<double>(cache.logits.data(), config.vocab_size, b, nullptr, 1.0);
    return sum / double(n);
  }

  std::vector<Matrix> grad(const Batch& b, int k) const {
    const auto net = view();
    const auto cache = engine::forward(net, b, engine::RouteSpec{RoutingPolicy::Kind::kLearned, k, 0, 0});
    const std::size_t v = config.vocab_size;
    const auto [sum, n] = engine::next_token_loss<double>(cache.logits.data(), v, b, nullptr, 1.0);
    std::vector<double> dlogits;
    engine::next_token_loss<double>(cache.logits.data(), v, b, &dlogits, 1.0 / double(n));
    auto g = engine::make_grads(net, false, false, true);
    engine::backward(net, cache, b, dlogits, g);
    return g.routers;
  }
};

TEST(RouterGradients, TopTwoMatchesCentralDifferences) {
  DoubleMoE m;
  m.config = tiny_config(8, 2, 2, 16, 12);
  for (int d = 0; d < 3; ++d) {
    auto p = init_params_as<double>(m.config, 60 + d);
    for_each_tensor(p, [](const std::string&, Tensor<double>& t) {
      for (auto& v : t.values) v *= 10.0;
    });
    m.experts.push_back(std::move(p));
  }
  // Use one trunk for all experts' views; only the MLPs differ.
  for (auto& e : m.experts) e.trunk = m.experts[0].trunk;
  m.routers = random_routers(m.config, 3, 8, 1.0);
  const Batch b = random_batch(2, 12, 3);
  const auto g = m.grad(b, 2);
  const double eps = 1e-5;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < m.routers.size(); ++l) {
    auto w = m.routers[l].values();
    const auto gl = g[l].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double up = m.loss(b, 2);
      w[i] = saved - eps;
      const double down = m.loss(b, 2);
      w[i] = saved;
      const double fd = (up - down) / (2 * eps);
      if (std::abs(fd) < 1e-7 && std::abs(gl[i]) < 1e-7) continue;
      EXPECT_LT(rel_error(fd, gl[i]), 1e-3) << "layer " << l << " entry " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20u);
}

TEST(RouterGradients, PublicEntryMatchesLossAndShape) {
  const ModelConfig c = tiny_config(8, 2, 2, 16, 12);
  const MoEModel moe = small_moe(c, 2);
  const Batch b = random_batch(2, 12, 3);
  const auto g = router_gradients(moe, b);
  ASSERT_EQ(g.routers.size(), 2u);
  EXPECT_EQ(g.routers[0].rows(), 8u);
  EXPECT_EQ(g.routers[0].cols(), 3u);
  EXPECT_NEAR(g.loss, moe_forward(moe, b, RoutingPolicy::learned()).trace.loss(), 1e-6);
}

}  // namespace
}  // namespace moeup
