// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
//
//   moeup_acceptance [--cache-dir DIR] [--only N,N,...]
//
// With --cache-dir the trained seed and experts are stored in DIR and reused
// by later runs of the same configuration.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "experiment.hpp"
#include "moeup/counters.hpp"
#include "moeup/error.hpp"
#include "moeup/eval_harness.hpp"
#include "moeup/moe.hpp"
#include "moeup/ridge_router.hpp"
#include "moeup/rng.hpp"
#include "moeup/trainer.hpp"

namespace fs = std::filesystem;
using namespace moeup;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

ModelConfig small_config(int hidden, int layers, int heads, int mlp, int seq) {
  ModelConfig c;
  c.hidden_size = hidden;
  c.n_layers = layers;
  c.n_heads = heads;
  c.mlp_hidden = mlp;
  c.max_seq_len = seq;
  return c;
}

Batch random_batch(std::size_t rows, std::size_t seq, std::uint64_t seed, int domain, std::size_t pad) {
  Rng rng(seed);
  Batch b;
  b.batch_size = rows;
  b.seq_len = seq;
  b.domain_id = domain;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < seq; ++t) {
      const bool real = t + pad < seq;
      b.tokens.push_back(real ? static_cast<int>(rng.below(256)) : kPadId);
      b.mask.push_back(real ? 1 : 0);
    }
  return b;
}

double rel_diff(const Matrix& a, const Matrix& b) {
  return max_abs_diff(a, b) / std::max(1.0, max_abs(b));
}

// ---------------------------------------------------------------------------
// 1. Streaming ridge equals the stacked closed form; order does not matter.

Outcome streaming_exactness() {
  const ModelConfig c = small_config(16, 2, 2, 32, 32);
  std::vector<ModelParams> experts;
  for (int d = 0; d < 3; ++d) experts.push_back(init_params(c, 500 + d));
  const MoEModel moe = assemble_moe(experts, c, UninitializedRouters{}, 1);

  std::vector<Batch> batches;
  for (int k = 0; k < 24; ++k) batches.push_back(random_batch(1 + k % 3, 32, 900 + k, k % 3, (k * 7) % 11));

  // Stacked features, read from captured forwards.
  std::vector<Eigen::MatrixXd> x(2);
  std::vector<Eigen::MatrixXd> y(2);
  std::vector<std::vector<std::vector<double>>> rows(2);
  std::vector<int> labels;
  for (const auto& b : batches) {
    const auto out = moe_forward(moe, b, RoutingPolicy::deterministic_domain(), true);
    for (std::size_t r = 0; r < b.batch_size; ++r)
      for (std::size_t t = 0; t < b.seq_len; ++t) {
        if (!b.real(r, t)) continue;
        for (std::size_t l = 0; l < 2; ++l) {
          const auto f = out.trace.features[l].at(r, t);
          rows[l].emplace_back(f.begin(), f.end());
        }
        labels.push_back(b.domain_id);
      }
  }
  const double lambda = 0.01;
  std::vector<Matrix> direct(2);
  for (std::size_t l = 0; l < 2; ++l) {
    const Eigen::Index n = static_cast<Eigen::Index>(rows[l].size()), h = c.hidden_size;
    Eigen::MatrixXd xs(n, h), ys = Eigen::MatrixXd::Zero(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < h; ++j) xs(i, j) = rows[l][i][j];
      ys(i, labels[i]) = 1.0;
    }
    const Eigen::MatrixXd a = xs.transpose() * xs + lambda * Eigen::MatrixXd::Identity(h, h);
    const Eigen::MatrixXd w = a.ldlt().solve(xs.transpose() * ys);
    direct[l] = Matrix(h, 3);
    for (Eigen::Index i = 0; i < h; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) direct[l](i, j) = w(i, j);
  }

  // Five partitions of the token stream: one batch at a time, pairs, thirds,
  // uneven chunks, and a permuted order.
  double worst = 0.0, order_gap = 0.0;
  std::vector<Matrix> reference;
  for (int partition = 0; partition < 5; ++partition) {
    std::vector<Batch> stream;
    if (partition == 4) {
      stream.assign(batches.rbegin(), batches.rend());
      Rng rng(3);
      for (std::size_t i = stream.size(); i > 1; --i) std::swap(stream[i - 1], stream[rng.below(i)]);
    } else {
      const std::size_t chunk = std::size_t{1} << partition;
      for (std::size_t s = 0; s < batches.size(); s += chunk) {
        Batch merged = batches[s];
        for (std::size_t k = s + 1; k < std::min(batches.size(), s + chunk); ++k) {
          if (batches[k].domain_id != merged.domain_id || batches[k].seq_len != merged.seq_len) {
            stream.push_back(merged);
            merged = batches[k];
            continue;
          }
          merged.batch_size += batches[k].batch_size;
          merged.tokens.insert(merged.tokens.end(), batches[k].tokens.begin(), batches[k].tokens.end());
          merged.mask.insert(merged.mask.end(), batches[k].mask.begin(), batches[k].mask.end());
        }
        stream.push_back(merged);
      }
    }
    RidgeStats s = new_stats(c, 3);
    for (const auto& b : stream) accumulate(s, moe, b);
    const auto sol = solve_routers(s, lambda, false);
    for (std::size_t l = 0; l < 2; ++l) worst = std::max(worst, max_abs_diff(sol.routers[l], direct[l]));
    if (reference.empty()) {
      reference = sol.routers;
    } else {
      for (std::size_t l = 0; l < 2; ++l)
        order_gap = std::max(order_gap, max_abs_diff(sol.routers[l], reference[l]));
    }
  }
  return {worst < 1e-8 && order_gap < 1e-8,
          "max|W_stream - W_stacked| = " + fmt("%.3g", worst) + ", max partition/order gap = " +
              fmt("%.3g", order_gap)};
}

// ---------------------------------------------------------------------------
// 2. Three concurrent shard accumulators merge to the single-pass statistics.

Outcome concurrent_merge() {
  const ModelConfig c = small_config(16, 2, 2, 32, 32);
  std::vector<ModelParams> experts;
  for (int d = 0; d < 3; ++d) experts.push_back(init_params(c, 600 + d));
  const MoEModel moe = assemble_moe(experts, c, UninitializedRouters{}, 1);
  std::vector<Batch> batches;
  for (int k = 0; k < 30; ++k) batches.push_back(random_batch(2, 32, 1000 + k, k % 3, k % 5));

  RidgeStats single = new_stats(c, 3);
  for (const auto& b : batches) accumulate(single, moe, b);

  std::vector<RidgeStats> shards(3, new_stats(c, 3));
  std::vector<std::thread> pool;
  for (std::size_t s = 0; s < 3; ++s)
    pool.emplace_back([&, s] {
      for (std::size_t k = s; k < batches.size(); k += 3) accumulate(shards[s], moe, batches[k]);
    });
  for (auto& t : pool) t.join();
  const RidgeStats merged = merge_stats(merge_stats(shards[0], shards[1]), shards[2]);

  double worst = 0.0;
  for (std::size_t l = 0; l < 2; ++l) {
    worst = std::max(worst, rel_diff(merged.a[l], single.a[l]));
    worst = std::max(worst, rel_diff(merged.b[l], single.b[l]));
  }
  const bool counts = merged.token_count == single.token_count;
  return {worst < 1e-10 && counts, "max relative gap = " + fmt("%.3g", worst) +
                                       (counts ? ", token counts equal" : ", token counts differ")};
}

// ---------------------------------------------------------------------------
// 3. Analytic gradients against central differences in double precision.

Outcome gradient_check() {
  const ModelConfig c = small_config(8, 2, 2, 16, 12);
  auto params = init_params_as<double>(c, 3);
  // Scale up the init so no tensor sits in a flat region.
  visit_params(params, [](const std::string&, Tensor<double>& t, ParamGroup) {
    for (auto& v : t.values) v *= 10.0;
  });
  const Batch batch = random_batch(2, 12, 5, 0, 2);
  const auto g = compute_gradients(params, c, batch);
  std::vector<const Tensor<double>*> grads;
  visit_params(g.grads, [&](const std::string&, const Tensor<double>& t, ParamGroup) { grads.push_back(&t); });

  const double eps = 1e-4;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0, idx = 0;
  visit_params(params, [&](const std::string& name, Tensor<double>& t, ParamGroup) {
    const Tensor<double>& gt = *grads[idx++];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.values[i];
      auto at = [&](double offset) {
        t.values[i] = saved + offset;
        return batch_loss(params, c, batch);
      };
      // Fourth-order central stencil.
      const double fd = (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps);
      t.values[i] = saved;
      const double an = gt.values[i];
      if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
      const double rel = std::abs(fd - an) / std::max(std::abs(fd), std::abs(an));
      if (rel > worst) {
        worst = rel;
        worst_name = name;
      }
      ++checked;
    }
  });
  return {worst < 1e-3 && checked > 1000,
          std::to_string(checked) + " entries, max relative error " + fmt("%.3g", worst) + " (" +
              worst_name + ")"};
}

// ---------------------------------------------------------------------------
// 4. D identical experts make the MoE equal to the dense expert.

Outcome degenerate_moe() {
  const ModelConfig c = small_config(32, 2, 4, 64, 32);
  const ModelParams p = init_params(c, 42);
  const std::vector<ModelParams> same(4, p);
  const MoEModel moe = assemble_moe(same, c, RandomRouters{7, 1.0}, 1);
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    const Batch b = random_batch(3, 32, 70 + k, k % 4, k * 3);
    const auto dense_trace = forward(p, c, b);
    const auto dense = dense_trace.logits.values();
    for (const auto& policy : {RoutingPolicy::learned(), RoutingPolicy::oracle(), RoutingPolicy::random(9)}) {
      const auto routed = moe_forward(moe, b, policy);
      const auto out = routed.trace.logits.values();
      for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, double(std::abs(out[i] - dense[i])));
    }
  }
  return {worst < 1e-5, "max |MoE - dense| = " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 7. Ridge fitting needs forwards only; router finetuning needs backwards.

Outcome cost_claim() {
  const ModelConfig c = small_config(16, 2, 2, 32, 64);
  std::vector<DomainSpec> specs;
  for (auto kind : {SyntheticKind::kArith, SyntheticKind::kBrackets, SyntheticKind::kProse}) {
    DomainSpec s;
    s.name = to_string(kind);
    s.kind = kind;
    s.size = 60;
    specs.push_back(s);
  }
  const auto corpora = build_corpora(specs, 7);
  std::vector<ModelParams> experts;
  for (int d = 0; d < 3; ++d) experts.push_back(init_params(c, 700 + d));
  RidgeFitOptions o;
  o.batch_size = 4;
  o.seq_len = 64;
  std::size_t batches = 0;
  for (const auto& corpus : corpora) batches += make_batches(corpus, Split::kTrain, 4, 64).size();

  const auto before = cost_snapshot();
  const auto fit = fit_routers_pipeline(assemble_moe(experts, c, UninitializedRouters{}, 1), corpora, o);
  const auto ridge = cost_snapshot() - before;

  TrainConfig btx;
  btx.learning_rate = 1e-4;
  btx.warmup_steps = 1;
  btx.total_steps = 5;
  btx.batch_size = 4;
  btx.seq_len = 64;
  btx.trainable = Trainable::kRoutersOnly;
  const auto mark = cost_snapshot();
  finetune_routers(assemble_moe(experts, c, RandomRouters{3}, 2), corpora, btx);
  const auto tuned = cost_snapshot() - mark;

  const bool ok = ridge.backward_passes == 0 && ridge.forward_passes == batches && fit.batches == batches &&
                  tuned.backward_passes > 0;
  return {ok, "ridge: " + std::to_string(ridge.forward_passes) + " forwards for " + std::to_string(batches) +
                  " batches, " + std::to_string(ridge.backward_passes) + " backwards; router finetuning: " +
                  std::to_string(tuned.backward_passes) + " backwards"};
}

// ---------------------------------------------------------------------------
// Desk-scale pipeline shared by 5, 6, 8, 9, 10.

struct Desk {
  cli::ExperimentConfig cfg;
  std::vector<DomainCorpus> corpora;
  std::vector<ModelParams> experts;
};

Desk train_desk(const std::optional<fs::path>& cache) {
  Desk desk;
  desk.cfg = cli::load_experiment(fs::path(MOEUP_SOURCE_DIR) / "configs" / "desk.json");
  desk.corpora = build_corpora(desk.cfg.domains, desk.cfg.corpus_seed);
  const std::string hash = desk.cfg.lineage_hash();
  auto cached = [&](const fs::path& p) {
    if (!cache || !fs::exists(p)) return false;
    return load_checkpoint(p, desk.cfg.model).config_hash == hash;
  };

  const auto t0 = std::chrono::steady_clock::now();
  ModelParams seed;
  const fs::path seed_path = cache ? *cache / "seed.ckpt" : fs::path();
  if (cached(seed_path)) {
    seed = load_checkpoint(seed_path).params;
  } else {
    seed = train(init_params(desk.cfg.model, desk.cfg.pretrain.seed), desk.cfg.model, desk.corpora,
                 desk.cfg.pretrain)
               .params;
    if (cache) save_checkpoint(seed, desk.cfg.model, seed_path, hash);
  }
  for (std::size_t d = 0; d < desk.corpora.size(); ++d) {
    const fs::path p = cache ? *cache / (desk.cfg.domains[d].name + ".ckpt") : fs::path();
    if (cached(p)) {
      desk.experts.push_back(load_checkpoint(p).params);
      continue;
    }
    TrainConfig tc = desk.cfg.expert;
    tc.seed += d;
    const std::vector<DomainCorpus> one{desk.corpora[d]};
    desk.experts.push_back(train(seed, desk.cfg.model, one, tc).params);
    if (cache) save_checkpoint(desk.experts.back(), desk.cfg.model, p, hash);
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "desk seed + experts ready in " << fmt("%.1f", s) << " s\n";
  return desk;
}

struct LadderOutcomes {
  Outcome c5, c6, c10;
};

LadderOutcomes ladder_criteria(const Desk& desk, std::ostream& table) {
  const LadderOptions opts = desk.cfg.ladder_options();
  const EvalReport report = run_ladder(desk.cfg.model, desk.experts, desk.corpora, opts);
  report.write_tsv(table);

  auto mean = [&](const char* m) { return report.at(m).summary.mean; };
  const double rome = mean(ladder::kRome), oracle = mean(ladder::kOracle), random = mean(ladder::kRandom),
               averaging = mean(ladder::kAveraging), rome_plus = mean(ladder::kRomePlus);

  // Layer-1 routing accuracy of the ridge routers on held-out data.
  const auto fit = fit_routers_pipeline(assemble_moe(desk.experts, desk.cfg.model, UninitializedRouters{},
                                                     desk.cfg.top_k, {}),
                                        desk.corpora, desk.cfg.ridge_options());
  const double acc = routing_accuracy(fit.moe, desk.corpora, RoutingPolicy::learned(), desk.cfg.eval)[0];

  LadderOutcomes out;
  out.c5 = {acc >= 0.90 && rome >= 85.0 && oracle - rome <= 6.0,
            "layer-1 routing accuracy " + fmt("%.4f", acc) + ", RoME " + fmt("%.2f", rome) + ", oracle " +
                fmt("%.2f", oracle)};
  out.c6 = {random < averaging + 3.0 && rome > random + 5.0 && rome_plus >= rome - 0.5,
            "random " + fmt("%.2f", random) + ", averaging " + fmt("%.2f", averaging) + ", RoME " +
                fmt("%.2f", rome) + ", RoME+ " + fmt("%.2f", rome_plus)};

  bool exact = true;
  for (std::size_t d = 0; d < report.domain_names.size(); ++d) {
    const auto& row = report.at(ladder::expert_row(report.domain_names[d]));
    for (const auto& seed_scores : row.score) exact &= seed_scores[d] == 100.0;
  }
  std::vector<double> doubled(report.reference.size());
  for (std::size_t d = 0; d < doubled.size(); ++d) doubled[d] = 2.0 * report.reference[d];
  const double half = normalized_score(doubled, report.reference).average;
  out.c10 = {exact && half == 50.0, std::string("expert d on domain d ") + (exact ? "= 100" : "!= 100") +
                                        ", p = 2 p_hat gives " + fmt("%.17g", half)};
  return out;
}

// ---------------------------------------------------------------------------
// 8. Statistics budget and ridge penalty sweeps.

Outcome sweep_trends(const Desk& desk, std::ostream& table) {
  const LadderOptions opts = desk.cfg.ladder_options();
  const std::vector<double> tokens{2, 8, 32, 128, 0};
  const auto t = run_sweep(desk.cfg.model, desk.experts, desk.corpora, SweepAxis::kMaxTokens, tokens, opts);
  const std::vector<double> lambdas{1e-4, 1e-2, 1.0};
  const auto l = run_sweep(desk.cfg.model, desk.experts, desk.corpora, SweepAxis::kLambda, lambdas, opts);
  t.write_csv(table);
  l.write_csv(table);

  bool monotone = true;
  for (std::size_t i = 0; i + 2 < t.points.size(); ++i) {
    const auto& a = t.points[i].score;
    const auto& b = t.points[i + 1].score;
    monotone &= b.mean >= a.mean - std::max(a.std, b.std);
  }
  const double at2 = t.points[0].score.mean, unlimited = t.points.back().score.mean;
  double lo = 1e300, hi = -1e300;
  for (const auto& p : l.points) {
    lo = std::min(lo, p.score.mean);
    hi = std::max(hi, p.score.mean);
  }
  std::ostringstream d;
  d << "max_tokens 2/8/32/128/all = ";
  for (std::size_t i = 0; i < t.points.size(); ++i) d << (i ? "/" : "") << fmt("%.2f", t.points[i].score.mean);
  d << (monotone ? " (non-decreasing)" : " (decreases)") << ", 2 tokens / all = " << fmt("%.3f", at2 / unlimited)
    << ", lambda 1e-4/1e-2/1 = ";
  for (std::size_t i = 0; i < l.points.size(); ++i) d << (i ? "/" : "") << fmt("%.4f", l.points[i].score.mean);
  d << " (spread " << fmt("%.4f", hi - lo) << ")";
  return {monotone && at2 >= 0.9 * unlimited && hi - lo < 3.0, d.str()};
}

// ---------------------------------------------------------------------------
// 9. Adding a third domain to a two-domain merged model.

Outcome continual_addition(const Desk& desk) {
  const RidgeFitOptions ridge = desk.cfg.ridge_options();
  const ModelConfig& c = desk.cfg.model;
  const std::vector<ModelParams> two_experts{desk.experts[0], desk.experts[1]};
  const std::span<const DomainCorpus> first_two(desk.corpora.data(), 2);
  const auto two = fit_routers_pipeline(assemble_moe(two_experts, c, UninitializedRouters{}, 1), first_two, ridge);
  const auto before = routing_accuracy(two.moe, first_two, RoutingPolicy::learned(), desk.cfg.eval);

  AddDomainOptions add;
  add.fit = ridge;
  const auto grown = add_domain(two.stats, two.moe, desk.experts[2], desk.corpora[2], add);
  const auto after = routing_accuracy(grown.moe, first_two, RoutingPolicy::learned(), desk.cfg.eval);
  double drift = 0.0;
  for (std::size_t l = 0; l < before.size(); ++l) drift = std::max(drift, std::abs(after[l] - before[l]));

  add.pin_trunk = true;
  const auto pinned = add_domain(two.stats, two.moe, desk.experts[2], desk.corpora[2], add);
  const std::vector<ModelParams> three{desk.experts[0], desk.experts[1], desk.experts[2]};
  MoEModel scratch_moe = assemble_moe(three, c, UninitializedRouters{}, 1);
  scratch_moe.trunk = two.moe.trunk;
  const auto scratch = fit_routers_pipeline(scratch_moe, std::span(desk.corpora.data(), 3), ridge);
  double gap = 0.0;
  for (std::size_t l = 0; l < scratch.stats.num_layers(); ++l) {
    gap = std::max(gap, rel_diff(pinned.stats.a[l], scratch.stats.a[l]));
    gap = std::max(gap, rel_diff(pinned.stats.b[l], scratch.stats.b[l]));
  }
  std::ostringstream d;
  d << "original-domain routing accuracy before/after per layer:";
  for (std::size_t l = 0; l < before.size(); ++l) d << " " << fmt("%.3f", before[l]) << "/" << fmt("%.3f", after[l]);
  d << ", max shift " << fmt("%.3f", drift) << ", incremental vs scratch stats " << fmt("%.3g", gap);
  return {drift < 0.05 && gap < 1e-8, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<fs::path> cache;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cache-dir" && i + 1 < argc) {
      cache = argv[++i];
      fs::create_directories(*cache);
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else {
      std::cerr << "usage: moeup_acceptance [--cache-dir DIR] [--only N,N,...]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const char* title, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << title << "): " << o.detail << " ["
              << fmt("%.1f", s) << " s]" << std::endl;
  };

  report(1, "streaming ridge exactness", streaming_exactness);
  report(2, "concurrent statistics merge", concurrent_merge);
  report(3, "gradient check", gradient_check);
  report(4, "degenerate MoE", degenerate_moe);
  report(7, "cost accounting", cost_claim);

  if (wanted(5) || wanted(6) || wanted(8) || wanted(9) || wanted(10)) {
    std::optional<Desk> desk;
    try {
      desk = train_desk(cache);
    } catch (const std::exception& e) {
      std::cerr << "desk training failed: " << e.what() << '\n';
    }
    std::ostringstream tables;
    if (wanted(5) || wanted(6) || wanted(10)) {
      std::optional<LadderOutcomes> ladder;
      auto run = [&]() -> LadderOutcomes& {
        if (!desk) throw std::runtime_error("desk models unavailable");
        if (!ladder) ladder = ladder_criteria(*desk, tables);
        return *ladder;
      };
      report(5, "router quality", [&] { return run().c5; });
      report(6, "ladder ordering", [&] { return run().c6; });
      report(10, "metric identities", [&] { return run().c10; });
    }
    report(8, "sweep trends", [&] {
      if (!desk) throw std::runtime_error("desk models unavailable");
      return sweep_trends(*desk, tables);
    });
    report(9, "continual addition", [&] {
      if (!desk) throw std::runtime_error("desk models unavailable");
      return continual_addition(*desk);
    });
    if (!tables.str().empty()) std::cout << "\n" << tables.str();
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
