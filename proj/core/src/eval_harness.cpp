// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/eval_harness.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "moeup/error.hpp"
#include "moeup/rng.hpp"

namespace moeup {

namespace {

std::vector<Batch> eval_batches(const DomainCorpus& corpus, const EvalOptions& o) {
  require(!corpus.split(o.split).empty(), ErrorCode::kEmptySplit,
          "eval: split of domain '" + corpus.name + "' is empty");
  return make_batches(corpus, o.split, o.batch_size, o.seq_len);
}

double perplexity_of(double loss_sum, std::size_t tokens, const std::string& name) {
  require(tokens > 0, ErrorCode::kEmptySplit, "eval: no next-token positions in '" + name + "'");
  const double ppl = std::exp(loss_sum / static_cast<double>(tokens));
  require(std::isfinite(ppl), ErrorCode::kNonFinite, "eval: non-finite perplexity on '" + name + "'");
  return ppl;
}

std::vector<DomainCorpus> labelled(std::span<const DomainCorpus> corpora) {
  std::vector<DomainCorpus> out(corpora.begin(), corpora.end());
  for (std::size_t d = 0; d < out.size(); ++d) out[d].domain_id = static_cast<int>(d);
  return out;
}

std::vector<double> accuracy_from(const std::vector<std::pair<std::size_t, std::size_t>>& hits) {
  std::vector<double> out;
  for (const auto& [ok, total] : hits)
    out.push_back(total == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(total));
  return out;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

double eval_perplexity(const ModelParams& params, const ModelConfig& config,
                       const DomainCorpus& corpus, const EvalOptions& options) {
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& batch : eval_batches(corpus, options)) {
    const auto trace = forward(params, config, batch, false);
    sum += trace.loss_sum;
    tokens += trace.loss_tokens;
  }
  return perplexity_of(sum, tokens, corpus.name);
}

MoEEval eval_moe(const MoEModel& moe, const DomainCorpus& corpus, const RoutingPolicy& policy,
                 const EvalOptions& options) {
  MoEEval out;
  out.routing_hits.assign(moe.config.n_layers, {0, 0});
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& batch : eval_batches(corpus, options)) {
    const auto fwd = moe_forward(moe, batch, policy, false);
    sum += fwd.trace.loss_sum;
    tokens += fwd.trace.loss_tokens;
    for (std::size_t l = 0; l < out.routing_hits.size(); ++l) {
      const auto [ok, total] = fwd.routing.hits(l, corpus.domain_id);
      out.routing_hits[l].first += ok;
      out.routing_hits[l].second += total;
    }
  }
  out.perplexity = perplexity_of(sum, tokens, corpus.name);
  return out;
}

double eval_perplexity(const MoEModel& moe, const DomainCorpus& corpus,
                       const RoutingPolicy& policy, const EvalOptions& options) {
  return eval_moe(moe, corpus, policy, options).perplexity;
}

std::vector<double> routing_accuracy(const MoEModel& moe, std::span<const DomainCorpus> corpora,
                                     const RoutingPolicy& policy, const EvalOptions& options) {
  std::vector<std::pair<std::size_t, std::size_t>> hits(moe.config.n_layers, {0, 0});
  for (const auto& corpus : labelled(corpora)) {
    const auto e = eval_moe(moe, corpus, policy, options);
    for (std::size_t l = 0; l < hits.size(); ++l) {
      hits[l].first += e.routing_hits[l].first;
      hits[l].second += e.routing_hits[l].second;
    }
  }
  return accuracy_from(hits);
}

NormalizedScores normalized_score(std::span<const double> perplexity,
                                  std::span<const double> reference) {
  require(!perplexity.empty() && perplexity.size() == reference.size(),
          ErrorCode::kInvalidArgument, "normalized_score: need one reference per domain");
  NormalizedScores out;
  for (std::size_t d = 0; d < perplexity.size(); ++d) {
    require(perplexity[d] > 0.0 && reference[d] > 0.0 && std::isfinite(perplexity[d]) &&
                std::isfinite(reference[d]),
            ErrorCode::kInvalidArgument,
            "normalized_score: perplexities must be positive (domain " + std::to_string(d) + ")");
    out.per_domain.push_back(100.0 * reference[d] / perplexity[d]);
    out.average += out.per_domain.back();
  }
  out.average /= static_cast<double>(perplexity.size());
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  return out;
}

const MethodResult* EvalReport::find(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return &m;
  return nullptr;
}

const MethodResult& EvalReport::at(const std::string& method) const {
  const auto* m = find(method);
  require(m != nullptr, ErrorCode::kInvalidArgument, "report has no row '" + method + "'");
  return *m;
}

void EvalReport::write_tsv(std::ostream& out) const {
  out << "method";
  for (const auto& name : domain_names) out << '\t' << name;
  out << "\tavg\tstd\n";
  out.setf(std::ios::fixed);
  out.precision(2);
  for (const auto& m : methods) {
    out << m.method;
    for (std::size_t d = 0; d < domain_names.size(); ++d) {
      double s = 0.0;
      for (const auto& seed_scores : m.score) s += seed_scores[d];
      out << '\t' << s / static_cast<double>(m.score.size());
    }
    out << '\t' << m.summary.mean << '\t' << m.summary.std << '\n';
  }
  out.unsetf(std::ios::fixed);
}

void EvalReport::write_json(std::ostream& out) const {
  nlohmann::json j;
  j["domain_names"] = domain_names;
  j["reference_perplexity"] = reference;
  j["expert_grid"] = expert_grid;
  j["seeds"] = seeds;
  j["methods"] = nlohmann::json::array();
  for (const auto& m : methods) {
    j["methods"].push_back({{"method", m.method},
                            {"perplexity", m.perplexity},
                            {"score", m.score},
                            {"average", m.average},
                            {"mean", m.summary.mean},
                            {"std", m.summary.std},
                            {"routing_accuracy", m.routing_accuracy},
                            {"forward_passes", m.cost.forward_passes},
                            {"backward_passes", m.cost.backward_passes},
                            {"router_reads", m.cost.router_reads},
                            {"wall_seconds", m.wall_seconds}});
  }
  out << j.dump(2) << '\n';
}

std::string ladder::expert_row(const std::string& domain) { return "expert_" + domain; }

namespace {

// Accumulates one method's per-seed results.
class RowBuilder {
 public:
  RowBuilder(std::string method, std::span<const double> reference)
      : reference_(reference.begin(), reference.end()), start_(Clock::now()),
        cost0_(cost_snapshot()) {
    row_.method = std::move(method);
  }

  void add_seed(std::vector<double> perplexity, std::vector<double> routing = {}) {
    const auto s = normalized_score(perplexity, reference_);
    row_.perplexity.push_back(std::move(perplexity));
    row_.score.push_back(s.per_domain);
    row_.average.push_back(s.average);
    if (!routing.empty()) routing_.push_back(std::move(routing));
  }

  MethodResult finish() {
    row_.summary = mean_std(row_.average);
    if (!routing_.empty()) {
      row_.routing_accuracy.assign(routing_[0].size(), 0.0);
      for (const auto& r : routing_)
        for (std::size_t l = 0; l < r.size(); ++l)
          row_.routing_accuracy[l] += r[l] / static_cast<double>(routing_.size());
    }
    row_.cost = cost_snapshot() - cost0_;
    row_.wall_seconds = seconds_since(start_);
    return std::move(row_);
  }

 private:
  MethodResult row_;
  std::vector<double> reference_;
  std::vector<std::vector<double>> routing_;
  Clock::time_point start_;
  CostSnapshot cost0_;
};

struct MoEScore {
  std::vector<double> perplexity;
  std::vector<double> routing;
};

MoEScore score_moe(const MoEModel& moe, std::span<const DomainCorpus> corpora,
                   const RoutingPolicy& policy, const EvalOptions& options) {
  MoEScore out;
  std::vector<std::pair<std::size_t, std::size_t>> hits(moe.config.n_layers, {0, 0});
  for (const auto& corpus : corpora) {
    const auto e = eval_moe(moe, corpus, policy, options);
    out.perplexity.push_back(e.perplexity);
    for (std::size_t l = 0; l < hits.size(); ++l) {
      hits[l].first += e.routing_hits[l].first;
      hits[l].second += e.routing_hits[l].second;
    }
  }
  out.routing = accuracy_from(hits);
  return out;
}

std::vector<std::string> names_of(std::span<const DomainCorpus> corpora) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < corpora.size(); ++d)
    out.push_back(corpora[d].name.empty() ? "domain" + std::to_string(d) : corpora[d].name);
  return out;
}

TrainConfig routers_only(TrainConfig c, std::uint64_t seed) {
  c.trainable = Trainable::kRoutersOnly;
  c.seed = hash_combine(c.seed, seed);
  return c;
}

std::vector<double> reference_perplexities(const ModelConfig& config,
                                           std::span<const ModelParams> experts,
                                           std::span<const DomainCorpus> corpora,
                                           const EvalOptions& options) {
  std::vector<double> out;
  for (std::size_t d = 0; d < corpora.size(); ++d)
    out.push_back(eval_perplexity(experts[d], config, corpora[d], options));
  return out;
}

}  // namespace

EvalReport run_ladder(const ModelConfig& config, std::span<const ModelParams> experts,
                      std::span<const DomainCorpus> input_corpora, const LadderOptions& options) {
  require(!experts.empty() && experts.size() == input_corpora.size(), ErrorCode::kInvalidArgument,
          "run_ladder: need one expert per domain");
  require(!options.seeds.empty(), ErrorCode::kInvalidArgument, "run_ladder: no seeds");
  const auto corpora = labelled(input_corpora);
  const std::size_t n_domains = corpora.size();
  const auto& eval = options.eval;

  EvalReport report;
  report.domain_names = names_of(corpora);
  report.seeds = options.seeds;

  // Dense expert grid; the diagonal is the reference.
  for (std::size_t e = 0; e < n_domains; ++e) {
    std::vector<double> row;
    for (std::size_t d = 0; d < n_domains; ++d)
      row.push_back(eval_perplexity(experts[e], config, corpora[d], eval));
    report.expert_grid.push_back(std::move(row));
  }
  for (std::size_t d = 0; d < n_domains; ++d) report.reference.push_back(report.expert_grid[d][d]);
  const std::vector<double>& ref = report.reference;

  // Deterministic rows are evaluated once and repeated for every seed.
  const std::size_t n_seeds = options.seeds.size();
  for (std::size_t e = 0; e < n_domains; ++e) {
    RowBuilder row(ladder::expert_row(report.domain_names[e]), ref);
    for (std::size_t s = 0; s < n_seeds; ++s) row.add_seed(report.expert_grid[e]);
    report.methods.push_back(row.finish());
  }
  {
    RowBuilder row(ladder::kAveraging, ref);
    const ModelParams avg = average_models(experts);
    std::vector<double> ppl;
    for (const auto& c : corpora) ppl.push_back(eval_perplexity(avg, config, c, eval));
    for (std::size_t s = 0; s < n_seeds; ++s) row.add_seed(ppl);
    report.methods.push_back(row.finish());
  }
  const MoEModel merged =
      assemble_moe(experts, config, UninitializedRouters{}, 1, report.domain_names);
  {
    RowBuilder row(ladder::kOracle, ref);
    const auto r = score_moe(merged, corpora, RoutingPolicy::oracle(), eval);
    for (std::size_t s = 0; s < n_seeds; ++s) row.add_seed(r.perplexity, r.routing);
    report.methods.push_back(row.finish());
  }
  {
    RowBuilder row(ladder::kRandom, ref);
    for (auto seed : options.seeds) {
      const auto r = score_moe(merged, corpora, RoutingPolicy::random(seed), eval);
      row.add_seed(r.perplexity, r.routing);
    }
    report.methods.push_back(row.finish());
  }
  if (!options.skip_finetuned) {
    RowBuilder row(ladder::kBtx, ref);
    for (auto seed : options.seeds) {
      MoEModel moe = assemble_moe(experts, config,
                                  RandomRouters{seed, options.random_router_stddev},
                                  options.btx_top_k, report.domain_names);
      moe = finetune_routers(std::move(moe), corpora, routers_only(options.btx, seed)).moe;
      const auto r = score_moe(moe, corpora, RoutingPolicy::learned(options.btx_top_k), eval);
      row.add_seed(r.perplexity, r.routing);
    }
    report.methods.push_back(row.finish());
  }
  MoEModel rome;
  {
    RowBuilder row(ladder::kRome, ref);
    MoEModel base = merged;
    base.top_k = options.rome_top_k;
    rome = fit_routers_pipeline(std::move(base), corpora, options.ridge).moe;
    const auto r = score_moe(rome, corpora, RoutingPolicy::learned(options.rome_top_k), eval);
    for (std::size_t s = 0; s < n_seeds; ++s) row.add_seed(r.perplexity, r.routing);
    report.methods.push_back(row.finish());
  }
  if (!options.skip_finetuned) {
    RowBuilder row(ladder::kRomePlus, ref);
    for (auto seed : options.seeds) {
      const MoEModel moe = finetune_routers(rome, corpora, routers_only(options.rome_plus, seed)).moe;
      const auto r = score_moe(moe, corpora, RoutingPolicy::learned(options.rome_top_k), eval);
      row.add_seed(r.perplexity, r.routing);
    }
    report.methods.push_back(row.finish());
  }
  return report;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "lambda") return SweepAxis::kLambda;
  if (name == "topk" || name == "top_k") return SweepAxis::kTopK;
  if (name == "max_tokens" || name == "max-tokens") return SweepAxis::kMaxTokens;
  fail(ErrorCode::kConfigError, "unknown sweep axis '" + name + "' (lambda|topk|max_tokens)");
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kLambda: return "lambda";
    case SweepAxis::kTopK: return "topk";
    case SweepAxis::kMaxTokens: return "max_tokens";
  }
  return "?";
}

void SweepResult::write_csv(std::ostream& out) const {
  out << to_string(axis) << ",mean,std\n";
  out.precision(10);
  for (const auto& p : points) out << p.x << ',' << p.score.mean << ',' << p.score.std << '\n';
}

SweepResult run_sweep(const ModelConfig& config, std::span<const ModelParams> experts,
                      std::span<const DomainCorpus> input_corpora, SweepAxis axis,
                      std::span<const double> values, const LadderOptions& options) {
  require(!experts.empty() && experts.size() == input_corpora.size(), ErrorCode::kInvalidArgument,
          "run_sweep: need one expert per domain");
  const auto corpora = labelled(input_corpora);
  const auto ref = reference_perplexities(config, experts, corpora, options.eval);
  MoEModel merged = assemble_moe(experts, config, UninitializedRouters{}, options.rome_top_k,
                                 names_of(corpora));

  SweepResult out;
  out.axis = axis;
  auto record = [&](double x, const MoEModel& moe, int top_k) {
    const auto r = score_moe(moe, corpora, RoutingPolicy::learned(top_k), options.eval);
    SweepPoint p;
    p.x = x;
    p.per_seed = {normalized_score(r.perplexity, ref).average};
    p.score = mean_std(p.per_seed);
    out.points.push_back(std::move(p));
  };

  switch (axis) {
    case SweepAxis::kLambda: {
      // The statistics do not depend on lambda; fit once and re-solve.
      auto fit = fit_routers_pipeline(merged, corpora, options.ridge);
      for (double lambda : values) {
        require(lambda > 0.0, ErrorCode::kConfigError, "lambda values must be > 0");
        MoEModel moe = fit.moe;
        install_routers(moe, solve_routers(fit.stats, lambda, options.ridge.normalize).routers);
        record(lambda, moe, options.rome_top_k);
      }
      break;
    }
    case SweepAxis::kTopK: {
      const auto fit = fit_routers_pipeline(merged, corpora, options.ridge);
      for (double k : values) {
        const int top_k = static_cast<int>(k);
        require(top_k >= 1 && top_k <= merged.num_experts() && top_k == k,
                ErrorCode::kConfigError, "top_k values must be integers in [1, D]");
        record(k, fit.moe, top_k);
      }
      break;
    }
    case SweepAxis::kMaxTokens: {
      for (double m : values) {
        require(m >= 0 && m == std::floor(m), ErrorCode::kConfigError,
                "max_tokens values must be non-negative integers (0 = unlimited)");
        RidgeFitOptions ridge = options.ridge;
        ridge.max_tokens =
            m == 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(m));
        record(m, fit_routers_pipeline(merged, corpora, ridge).moe, options.rome_top_k);
      }
      break;
    }
  }
  return out;
}

}  // namespace moeup
