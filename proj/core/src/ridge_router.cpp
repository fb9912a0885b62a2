// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/ridge_router.hpp"

#include <cmath>
#include <limits>

#include "container.hpp"
#include "moeup/error.hpp"

namespace moeup {

RidgeStats new_stats(const ModelConfig& config, std::size_t num_domains,
                     std::vector<std::string> domain_names) {
  config.validate();
  require(num_domains >= 1, ErrorCode::kInvalidArgument, "new_stats: need at least one domain");
  require(domain_names.empty() || domain_names.size() == num_domains,
          ErrorCode::kInvalidArgument, "new_stats: one name per domain");
  const std::size_t h = config.hidden_size;
  RidgeStats s;
  s.a.assign(config.n_layers, Matrix(h, h));
  s.b.assign(config.n_layers, Matrix(h, num_domains));
  s.token_count.assign(num_domains, 0);
  s.domain_names = std::move(domain_names);
  if (s.domain_names.empty())
    for (std::size_t d = 0; d < num_domains; ++d) s.domain_names.push_back("domain" + std::to_string(d));
  return s;
}

void accumulate_features(RidgeStats& stats, std::size_t layer, int domain,
                         std::span<const float> features, std::size_t rows) {
  require(layer < stats.num_layers(), ErrorCode::kInvalidArgument, "accumulate: layer out of range");
  require(domain >= 0 && static_cast<std::size_t>(domain) < stats.num_domains(),
          ErrorCode::kInvalidArgument,
          "accumulate: domain " + std::to_string(domain) + " >= D=" +
              std::to_string(stats.num_domains()));
  const std::size_t h = stats.hidden();
  require(features.size() == rows * h, ErrorCode::kDimensionMismatch,
          "accumulate: feature rows do not have width H");
  accumulate_gram(stats.a[layer], features, rows);
  Matrix& b = stats.b[layer];
  for (std::size_t j = 0; j < h; ++j) {
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sum += static_cast<double>(features[r * h + j]);
    b(j, domain) += sum;
  }
}

void accumulate(RidgeStats& stats, const MoEModel& moe, const Batch& batch,
                std::optional<std::size_t> max_tokens) {
  require(batch.domain_id >= 0 && static_cast<std::size_t>(batch.domain_id) < stats.num_domains(),
          ErrorCode::kInvalidArgument,
          "accumulate: batch domain " + std::to_string(batch.domain_id) + " >= D=" +
              std::to_string(stats.num_domains()));
  require(stats.num_layers() == static_cast<std::size_t>(moe.config.n_layers) &&
              stats.hidden() == static_cast<std::size_t>(moe.config.hidden_size),
          ErrorCode::kShapeMismatch, "accumulate: statistics do not match the model");
  require(batch.domain_id < moe.num_experts(), ErrorCode::kInvalidArgument,
          "accumulate: batch domain has no expert");

  std::vector<std::size_t> keep;  // flat (row, position) indices
  for (std::size_t r = 0; r < batch.batch_size; ++r) {
    std::size_t taken = 0;
    for (std::size_t t = 0; t < batch.seq_len; ++t) {
      if (!batch.real(r, t)) continue;
      if (max_tokens && taken >= *max_tokens) break;
      keep.push_back(r * batch.seq_len + t);
      ++taken;
    }
  }

  const auto fwd = moe_forward(moe, batch, RoutingPolicy::deterministic_domain(), true);
  const std::size_t h = stats.hidden();
  std::vector<float> rows(keep.size() * h);
  for (std::size_t l = 0; l < stats.num_layers(); ++l) {
    const auto all = fwd.trace.features[l].values();
    for (std::size_t i = 0; i < keep.size(); ++i)
      std::copy_n(all.begin() + keep[i] * h, h, rows.begin() + i * h);
    accumulate_features(stats, l, batch.domain_id, rows, keep.size());
  }
  stats.token_count[batch.domain_id] += keep.size();
}

RidgeStats merge_stats(const RidgeStats& a, const RidgeStats& b) {
  require(a.num_layers() == b.num_layers() && a.hidden() == b.hidden() &&
              a.num_domains() == b.num_domains(),
          ErrorCode::kShapeMismatch, "merge_stats: L, H or D differ");
  require(a.domain_names == b.domain_names, ErrorCode::kShapeMismatch,
          "merge_stats: domain names differ");
  RidgeStats out = a;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    auto oa = out.a[l].values();
    auto ob = out.b[l].values();
    const auto ba = b.a[l].values();
    const auto bb = b.b[l].values();
    for (std::size_t i = 0; i < oa.size(); ++i) oa[i] += ba[i];
    for (std::size_t i = 0; i < ob.size(); ++i) ob[i] += bb[i];
  }
  for (std::size_t d = 0; d < a.num_domains(); ++d) out.token_count[d] += b.token_count[d];
  return out;
}

void normalize_columns(Matrix& w) {
  constexpr double kTol = 8 * std::numeric_limits<double>::epsilon();
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) sq += w(r, c) * w(r, c);
    const double norm = std::sqrt(sq);
    if (norm == 0.0 || std::abs(norm - 1.0) <= kTol) continue;
    for (std::size_t r = 0; r < w.rows(); ++r) w(r, c) /= norm;
  }
}

RouterSolution solve_routers(const RidgeStats& stats, double lambda, bool normalize) {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::kInvalidArgument,
          "solve_routers: lambda must be > 0");
  RouterSolution sol;
  sol.lambda = lambda;
  sol.normalized = normalize;
  for (std::size_t l = 0; l < stats.num_layers(); ++l) {
    Matrix w;
    try {
      w = solve_spd(stats.a[l], stats.b[l], lambda);
    } catch (const NotPositiveDefiniteError& e) {
      throw NotPositiveDefiniteError(e.pivot(), static_cast<long>(l));
    }
    require(w.all_finite(), ErrorCode::kNonFinite,
            "solve_routers: non-finite solution at layer " + std::to_string(l));
    if (normalize) normalize_columns(w);
    sol.routers.push_back(std::move(w));
  }
  return sol;
}

RidgeFitResult fit_routers_pipeline(MoEModel moe, std::span<const DomainCorpus> corpora,
                                    const RidgeFitOptions& options) {
  moe.validate();
  require(corpora.size() == static_cast<std::size_t>(moe.num_experts()),
          ErrorCode::kInvalidArgument,
          "fit_routers: " + std::to_string(corpora.size()) + " corpora for " +
              std::to_string(moe.num_experts()) + " experts");
  RidgeFitResult out;
  out.stats = new_stats(moe.config, corpora.size(), moe.domain_names);
  for (std::size_t d = 0; d < corpora.size(); ++d) {
    DomainCorpus corpus = corpora[d];
    corpus.domain_id = static_cast<int>(d);
    for (const auto& batch : make_batches(corpus, options.split, options.batch_size, options.seq_len)) {
      accumulate(out.stats, moe, batch, options.max_tokens);
      ++out.batches;
    }
  }
  out.solution = solve_routers(out.stats, options.lambda, options.normalize);
  install_routers(moe, out.solution.routers);
  out.moe = std::move(moe);
  return out;
}

AddDomainResult add_domain(const RidgeStats& stats, const MoEModel& moe,
                           const ModelParams& new_expert, const DomainCorpus& new_corpus,
                           const AddDomainOptions& options) {
  moe.validate();
  check_shapes(new_expert, moe.config);
  const std::size_t d_old = moe.num_experts();
  require(stats.num_domains() == d_old, ErrorCode::kShapeMismatch,
          "add_domain: statistics and model disagree on D");

  AddDomainResult out;
  out.moe = moe;
  if (!options.pin_trunk) {
    // Running mean: the old trunk already averages d_old experts.
    std::vector<Tensor<float>*> dst;
    visit_trunk(out.moe.trunk, [&](const std::string&, Tensor<float>& t) { dst.push_back(&t); });
    std::size_t i = 0;
    const double n = static_cast<double>(d_old);
    visit_trunk(new_expert.trunk, [&](const std::string&, const Tensor<float>& t) {
      auto& v = dst[i++]->values;
      for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = static_cast<float>((n * v[j] + t.values[j]) / (n + 1.0));
    });
  }
  for (std::size_t l = 0; l < out.moe.experts.size(); ++l)
    out.moe.experts[l].push_back(new_expert.mlps[l]);
  out.moe.domain_names.push_back(new_corpus.name.empty() ? "domain" + std::to_string(d_old)
                                                         : new_corpus.name);
  out.moe.routers.clear();

  out.stats = stats;
  out.stats.domain_names.push_back(out.moe.domain_names.back());
  out.stats.token_count.push_back(0);
  for (auto& b : out.stats.b) {
    Matrix wider(b.rows(), d_old + 1);
    for (std::size_t r = 0; r < b.rows(); ++r)
      for (std::size_t c = 0; c < d_old; ++c) wider(r, c) = b(r, c);
    b = std::move(wider);
  }

  DomainCorpus corpus = new_corpus;
  corpus.domain_id = static_cast<int>(d_old);
  const auto& fit = options.fit;
  const auto& split = corpus.split(fit.split);
  if (!split.empty())
    for (const auto& batch : make_batches(corpus, fit.split, fit.batch_size, fit.seq_len))
      accumulate(out.stats, out.moe, batch, fit.max_tokens);

  out.solution = solve_routers(out.stats, fit.lambda, fit.normalize);
  install_routers(out.moe, out.solution.routers);
  return out;
}

void save_stats(const RidgeStats& stats, const std::filesystem::path& path,
                const std::string& config_hash) {
  const std::size_t h = stats.hidden(), d = stats.num_domains();
  container::Writer w({{"format", "moeup-ridge-stats"},
                       {"version", kStatsVersion},
                       {"L", stats.num_layers()},
                       {"H", h},
                       {"D", d},
                       {"domain_names", stats.domain_names},
                       {"token_count", stats.token_count},
                       {"config_hash", config_hash}});
  for (std::size_t l = 0; l < stats.num_layers(); ++l)
    w.add("A." + std::to_string(l), {h, h}, stats.a[l].values());
  for (std::size_t l = 0; l < stats.num_layers(); ++l)
    w.add("b." + std::to_string(l), {h, d}, stats.b[l].values());
  w.write(path, std::string_view(kStatsMagic, sizeof(kStatsMagic)));
}

LoadedStats load_stats(const std::filesystem::path& path) {
  container::Reader r(path, std::string_view(kStatsMagic, sizeof(kStatsMagic)), kStatsVersion);
  const auto& hdr = r.header();
  LoadedStats out;
  const std::size_t layers = hdr.at("L").get<std::size_t>();
  const std::size_t h = hdr.at("H").get<std::size_t>();
  const std::size_t d = hdr.at("D").get<std::size_t>();
  out.stats.domain_names = hdr.at("domain_names").get<std::vector<std::string>>();
  out.stats.token_count = hdr.at("token_count").get<std::vector<std::uint64_t>>();
  out.config_hash = hdr.value("config_hash", "");
  require(out.stats.domain_names.size() == d && out.stats.token_count.size() == d,
          ErrorCode::kShapeMismatch, path.string() + ": header domain count mismatch");
  for (std::size_t l = 0; l < layers; ++l)
    out.stats.a.emplace_back(h, h, r.f64("A." + std::to_string(l), {h, h}));
  for (std::size_t l = 0; l < layers; ++l)
    out.stats.b.emplace_back(h, d, r.f64("b." + std::to_string(l), {h, d}));
  return out;
}

}  // namespace moeup
