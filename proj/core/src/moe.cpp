// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/moe.hpp"

#include <ostream>

#include "container.hpp"
#include "moe_internal.hpp"
#include "moeup/error.hpp"
#include "moeup/json.hpp"

namespace moeup {

const char* to_string(RoutingPolicy::Kind kind) {
  switch (kind) {
    case RoutingPolicy::Kind::kLearned: return "learned";
    case RoutingPolicy::Kind::kOracle: return "oracle";
    case RoutingPolicy::Kind::kRandom: return "random";
    case RoutingPolicy::Kind::kDeterministicDomain: return "deterministic_domain";
  }
  return "?";
}

void MoEModel::validate() const {
  config.validate();
  const std::size_t layers = config.n_layers;
  require(experts.size() == layers && trunk.layers.size() == layers, ErrorCode::kShapeMismatch,
          "MoE layer count does not match the config");
  const int d = num_experts();
  require(d >= 1, ErrorCode::kInvalidArgument, "MoE needs at least one expert");
  for (const auto& bank : experts)
    require(static_cast<int>(bank.size()) == d, ErrorCode::kShapeMismatch,
            "every layer must hold the same number of experts");
  require(top_k >= 1 && top_k <= d, ErrorCode::kInvalidArgument,
          "top_k must be in [1, " + std::to_string(d) + "], got " + std::to_string(top_k));
  if (!routers.empty()) {
    require(routers.size() == layers, ErrorCode::kShapeMismatch, "one router per layer expected");
    for (const auto& w : routers)
      require(w.rows() == static_cast<std::size_t>(config.hidden_size) &&
                  w.cols() == static_cast<std::size_t>(d),
              ErrorCode::kDimensionMismatch, "router must be H x D");
  }
}

std::pair<std::size_t, std::size_t> RoutingRecord::hits(std::size_t layer, int expert) const {
  const Layer& l = layers.at(layer);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < l.tokens(); ++i)
    if (l.experts[i * top_k] == expert) ++hit;
  return {hit, l.tokens()};
}

double RoutingRecord::accuracy(std::size_t layer, int expert) const {
  const auto [hit, total] = hits(layer, expert);
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

void RoutingRecord::write_jsonl(std::ostream& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    for (std::size_t i = 0; i < layer.tokens(); ++i) {
      for (int s = 0; s < top_k; ++s) {
        nlohmann::json j = {{"layer", l},
                            {"row", layer.row[i]},
                            {"position", layer.position[i]},
                            {"expert_id", layer.experts[i * top_k + s]},
                            {"gate", layer.gates[i * top_k + s]}};
        out << j.dump() << '\n';
      }
    }
  }
}

namespace {

void check_same_structure(std::span<const ModelParams> experts) {
  require(!experts.empty(), ErrorCode::kInvalidArgument, "at least one expert is required");
  std::vector<std::pair<std::string, std::vector<std::size_t>>> ref;
  visit_params(experts[0], [&](const std::string& name, const Tensor<float>& t, ParamGroup) {
    ref.emplace_back(name, t.shape);
  });
  for (std::size_t e = 1; e < experts.size(); ++e) {
    std::size_t i = 0;
    bool ok = true;
    visit_params(experts[e], [&](const std::string& name, const Tensor<float>& t, ParamGroup) {
      ok = ok && i < ref.size() && ref[i].first == name && ref[i].second == t.shape;
      ++i;
    });
    require(ok && i == ref.size(), ErrorCode::kShapeMismatch,
            "expert " + std::to_string(e) + " has different tensor names or shapes");
  }
}

void mean_into(Tensor<float>& dst, std::span<const Tensor<float>* const> srcs) {
  const double inv = 1.0 / static_cast<double>(srcs.size());
  for (std::size_t i = 0; i < dst.values.size(); ++i) {
    double s = 0.0;
    for (const auto* t : srcs) s += static_cast<double>(t->values[i]);
    dst.values[i] = static_cast<float>(s * inv);
  }
}

}  // namespace

Trunk<float> average_trunk(std::span<const ModelParams> experts) {
  check_same_structure(experts);
  Trunk<float> out = experts[0].trunk;
  std::vector<std::vector<const Tensor<float>*>> sources;
  for (const auto& e : experts) {
    std::size_t i = 0;
    visit_trunk(e.trunk, [&](const std::string&, const Tensor<float>& t) {
      if (sources.size() <= i) sources.emplace_back();
      sources[i++].push_back(&t);
    });
  }
  std::size_t i = 0;
  visit_trunk(out, [&](const std::string&, Tensor<float>& t) { mean_into(t, sources[i++]); });
  return out;
}

ModelParams average_models(std::span<const ModelParams> experts) {
  check_same_structure(experts);
  ModelParams out = experts[0];
  std::vector<std::vector<const Tensor<float>*>> sources;
  for (const auto& e : experts) {
    std::size_t i = 0;
    visit_params(e, [&](const std::string&, const Tensor<float>& t, ParamGroup) {
      if (sources.size() <= i) sources.emplace_back();
      sources[i++].push_back(&t);
    });
  }
  std::size_t i = 0;
  visit_params(out, [&](const std::string&, Tensor<float>& t, ParamGroup) {
    mean_into(t, sources[i++]);
  });
  return out;
}

std::vector<Matrix> random_routers(const ModelConfig& config, int num_experts,
                                   std::uint64_t seed, double stddev) {
  Rng rng(hash_combine(seed, 0x7007e7));
  std::vector<Matrix> out;
  for (int l = 0; l < config.n_layers; ++l) {
    Matrix w(config.hidden_size, num_experts);
    for (double& x : w.values()) x = rng.normal() * stddev;
    out.push_back(std::move(w));
  }
  return out;
}

MoEModel assemble_moe(std::span<const ModelParams> experts, const ModelConfig& config,
                      const RouterInit& routers, int top_k, std::vector<std::string> domain_names) {
  for (const auto& e : experts) check_shapes(e, config);
  const int d = static_cast<int>(experts.size());
  require(top_k >= 1 && top_k <= d, ErrorCode::kInvalidArgument,
          "top_k " + std::to_string(top_k) + " exceeds the " + std::to_string(d) + " experts");
  MoEModel moe;
  moe.config = config;
  moe.top_k = top_k;
  moe.trunk = average_trunk(experts);
  moe.experts.resize(config.n_layers);
  for (int l = 0; l < config.n_layers; ++l)
    for (const auto& e : experts) moe.experts[l].push_back(e.mlps[l]);
  if (domain_names.empty())
    for (int i = 0; i < d; ++i) domain_names.push_back("domain" + std::to_string(i));
  require(static_cast<int>(domain_names.size()) == d, ErrorCode::kInvalidArgument,
          "one domain name per expert expected");
  moe.domain_names = std::move(domain_names);
  if (const auto* r = std::get_if<RandomRouters>(&routers)) {
    moe.routers = random_routers(config, d, r->seed, r->stddev);
  } else if (const auto* w = std::get_if<std::vector<Matrix>>(&routers)) {
    install_routers(moe, *w);
  }
  moe.validate();
  return moe;
}

void install_routers(MoEModel& moe, std::vector<Matrix> routers) {
  require(routers.size() == static_cast<std::size_t>(moe.config.n_layers),
          ErrorCode::kDimensionMismatch, "one router per layer expected");
  for (const auto& w : routers)
    require(w.rows() == static_cast<std::size_t>(moe.config.hidden_size) &&
                w.cols() == static_cast<std::size_t>(moe.num_experts()),
            ErrorCode::kDimensionMismatch,
            "router has " + std::to_string(w.cols()) + " columns for " +
                std::to_string(moe.num_experts()) + " experts");
  moe.routers = std::move(routers);
}

namespace detail_moe {

engine::NetView<float> moe_view(const MoEModel& moe) {
  engine::NetView<float> v;
  v.config = &moe.config;
  v.trunk = &moe.trunk;
  v.experts.resize(moe.experts.size());
  for (std::size_t l = 0; l < moe.experts.size(); ++l)
    for (const auto& e : moe.experts[l]) v.experts[l].push_back(&e);
  v.routers = moe.routers.empty() ? nullptr : &moe.routers;
  return v;
}

engine::RouteSpec route_spec(const MoEModel& moe, const Batch& batch, const RoutingPolicy& p) {
  engine::RouteSpec s;
  s.kind = p.kind;
  s.domain = batch.domain_id;
  s.seed = p.seed;
  s.top_k = 1;
  if (p.kind == RoutingPolicy::Kind::kLearned) {
    require(moe.routers_initialized(), ErrorCode::kInvalidArgument,
            "learned routing requires initialized routers");
    s.top_k = p.top_k > 0 ? p.top_k : moe.top_k;
    require(s.top_k >= 1 && s.top_k <= moe.num_experts(), ErrorCode::kInvalidArgument,
            "top_k outside [1, D]");
  }
  return s;
}

RoutingRecord routing_record(const engine::Cache<float>& c, const Batch& batch) {
  RoutingRecord rec;
  rec.top_k = c.layers.empty() ? 1 : c.layers[0].top_k;
  for (const auto& lc : c.layers) {
    RoutingRecord::Layer layer;
    const int k = lc.top_k;
    for (std::size_t r = 0; r < c.n; ++r) {
      if (!batch.mask[r]) continue;
      layer.row.push_back(static_cast<std::uint32_t>(r / c.seq));
      layer.position.push_back(static_cast<std::uint32_t>(r % c.seq));
      for (int s = 0; s < k; ++s) {
        layer.experts.push_back(lc.sel[r * k + s]);
        layer.gates.push_back(static_cast<double>(lc.gate[r * k + s]));
      }
    }
    rec.layers.push_back(std::move(layer));
  }
  return rec;
}

}  // namespace detail_moe

MoEForward moe_forward(const MoEModel& moe, const Batch& batch, const RoutingPolicy& policy,
                       bool capture) {
  const auto net = detail_moe::moe_view(moe);
  const auto spec = detail_moe::route_spec(moe, batch, policy);
  const auto cache = engine::forward(net, batch, spec);
  MoEForward out;
  const std::size_t b = batch.batch_size, t = batch.seq_len, h = moe.config.hidden_size,
                    v = moe.config.vocab_size;
  out.trace.logits = Tensor3(b, t, v);
  std::copy(cache.logits.begin(), cache.logits.end(), out.trace.logits.values().begin());
  if (capture) {
    for (const auto& lc : cache.layers) {
      Tensor3 f(b, t, h);
      std::copy(lc.m.begin(), lc.m.end(), f.values().begin());
      out.trace.features.push_back(std::move(f));
    }
  }
  std::tie(out.trace.loss_sum, out.trace.loss_tokens) =
      engine::next_token_loss<float>(cache.logits.data(), v, batch, nullptr, 1.0);
  out.routing = detail_moe::routing_record(cache, batch);
  return out;
}

ParamCounts count_active_params(const MoEModel& moe, int top_k) {
  require(top_k >= 1 && top_k <= moe.num_experts(), ErrorCode::kInvalidArgument,
          "top_k outside [1, D]");
  ParamCounts c;
  std::size_t trunk = 0;
  visit_trunk(moe.trunk, [&](const std::string&, const Tensor<float>& t) { trunk += t.size(); });
  std::size_t experts_total = 0;
  std::size_t one_expert_all_layers = 0;
  for (const auto& bank : moe.experts) {
    for (const auto& e : bank) experts_total += e.w_gate.size() + e.w_up.size() + e.w_down.size();
    one_expert_all_layers += bank[0].w_gate.size() + bank[0].w_up.size() + bank[0].w_down.size();
  }
  c.router = static_cast<std::size_t>(moe.config.n_layers) * moe.config.hidden_size *
             static_cast<std::size_t>(moe.num_experts());
  c.total = trunk + experts_total + c.router;
  c.active_per_token = trunk + static_cast<std::size_t>(top_k) * one_expert_all_layers + c.router;
  return c;
}

void save_moe(const MoEModel& moe, const std::filesystem::path& path,
              const std::string& config_hash) {
  moe.validate();
  container::Writer w({{"format", "moeup-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"kind", "moe"},
                       {"config", moe.config},
                       {"config_hash", config_hash},
                       {"num_experts", moe.num_experts()},
                       {"top_k", moe.top_k},
                       {"domain_names", moe.domain_names},
                       {"routers_initialized", moe.routers_initialized()}});
  visit_trunk(moe.trunk, [&](const std::string& name, const Tensor<float>& t) {
    w.add(name, t.shape, std::span<const float>(t.values));
  });
  for (int d = 0; d < moe.num_experts(); ++d)
    for (std::size_t l = 0; l < moe.experts.size(); ++l)
      visit_mlp(moe.experts[l][d],
                [&](const std::string& name, const Tensor<float>& t) {
                  w.add(name, t.shape, std::span<const float>(t.values));
                },
                "experts." + std::to_string(d) + ".layers." + std::to_string(l) + ".");
  for (std::size_t l = 0; l < moe.routers.size(); ++l)
    w.add("routers." + std::to_string(l), {moe.routers[l].rows(), moe.routers[l].cols()},
          moe.routers[l].values());
  w.write(path, std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)));
}

LoadedMoE load_moe(const std::filesystem::path& path) {
  container::Reader r(path, std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)),
                      kCheckpointVersion);
  const auto& hd = r.header();
  require(hd.value("kind", "") == "moe", ErrorCode::kShapeMismatch,
          path.string() + " is not an MoE checkpoint");
  LoadedMoE out;
  MoEModel& moe = out.moe;
  moe.config = hd.at("config").get<ModelConfig>();
  moe.config.validate();
  out.config_hash = hd.value("config_hash", "");
  moe.top_k = hd.at("top_k").get<int>();
  moe.domain_names = hd.at("domain_names").get<std::vector<std::string>>();
  const int d = hd.at("num_experts").get<int>();
  const ModelParams shapes = zeros_like<float>(moe.config);
  moe.trunk = shapes.trunk;
  visit_trunk(moe.trunk, [&](const std::string& name, Tensor<float>& t) {
    t.values = r.f32(name, t.shape);
  });
  moe.experts.assign(moe.config.n_layers, {});
  for (int l = 0; l < moe.config.n_layers; ++l) {
    for (int e = 0; e < d; ++e) {
      MlpBlock<float> mlp = shapes.mlps[l];
      visit_mlp(mlp,
                [&](const std::string& name, Tensor<float>& t) { t.values = r.f32(name, t.shape); },
                "experts." + std::to_string(e) + ".layers." + std::to_string(l) + ".");
      moe.experts[l].push_back(std::move(mlp));
    }
  }
  if (hd.value("routers_initialized", false)) {
    const std::size_t h = moe.config.hidden_size;
    for (int l = 0; l < moe.config.n_layers; ++l)
      moe.routers.emplace_back(h, d, r.f64("routers." + std::to_string(l), {h, std::size_t(d)}));
  }
  moe.validate();
  return out;
}

}  // namespace moeup
