// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/model.hpp"

#include <cmath>

#include "container.hpp"
#include "engine.hpp"
#include "moeup/error.hpp"
#include "moeup/json.hpp"
#include "moeup/rng.hpp"

namespace moeup {

void ModelConfig::validate() const {
  require(vocab_size > 0 && hidden_size > 0 && n_layers > 0 && n_heads > 0 && mlp_hidden > 0 &&
              max_seq_len > 0,
          ErrorCode::kConfigError, "model config fields must be positive");
  require(hidden_size % n_heads == 0, ErrorCode::kConfigError,
          "hidden_size must be divisible by n_heads");
  require(head_dim() % 2 == 0, ErrorCode::kConfigError, "head_dim must be even for rotary positions");
  require(pad_id >= 0 && pad_id < vocab_size, ErrorCode::kConfigError, "pad_id outside vocabulary");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"hidden_size", c.hidden_size}, {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"mlp_hidden", c.mlp_hidden},   {"max_seq_len", c.max_seq_len},
       {"pad_id", c.pad_id}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.pad_id = j.value("pad_id", c.pad_id);
}

template <class T>
Tensor<T>::Tensor(std::vector<std::size_t> dims, T fill) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  values.assign(n, fill);
}

template struct Tensor<float>;
template struct Tensor<double>;

template <class T>
BasicParams<T> zeros_like(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t v = cfg.vocab_size, h = cfg.hidden_size, f = cfg.mlp_hidden;
  BasicParams<T> p;
  p.trunk.tok_embeddings = Tensor<T>({v, h});
  p.trunk.layers.resize(cfg.n_layers);
  p.mlps.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& b = p.trunk.layers[l];
    b.attention_norm = Tensor<T>({h});
    b.wq = Tensor<T>({h, h});
    b.wk = Tensor<T>({h, h});
    b.wv = Tensor<T>({h, h});
    b.wo = Tensor<T>({h, h});
    b.ffn_norm = Tensor<T>({h});
    p.mlps[l] = {Tensor<T>({h, f}), Tensor<T>({h, f}), Tensor<T>({f, h})};
  }
  p.trunk.norm = Tensor<T>({h});
  p.trunk.output = Tensor<T>({h, v});
  return p;
}

template BasicParams<float> zeros_like<float>(const ModelConfig&);
template BasicParams<double> zeros_like<double>(const ModelConfig&);

template <class T>
BasicParams<T> init_params_as(const ModelConfig& cfg, std::uint64_t seed) {
  BasicParams<T> p = zeros_like<T>(cfg);
  constexpr double kStd = 0.02;
  const double out_std = kStd / std::sqrt(2.0 * cfg.n_layers);
  Rng rng(hash_combine(seed, 0x1417));
  visit_params(p, [&](const std::string& name, Tensor<T>& t, ParamGroup) {
    if (t.shape.size() == 1) {
      std::fill(t.values.begin(), t.values.end(), T(1));
      return;
    }
    const bool projection = name.ends_with("attention.wo") || name.ends_with("w_down");
    const double sd = projection ? out_std : kStd;
    for (auto& x : t.values) x = static_cast<T>(rng.normal() * sd);
  });
  return p;
}

template BasicParams<float> init_params_as<float>(const ModelConfig&, std::uint64_t);
template BasicParams<double> init_params_as<double>(const ModelConfig&, std::uint64_t);

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  return init_params_as<float>(config, seed);
}

std::size_t count_params(const ModelParams& params) {
  std::size_t n = 0;
  visit_params(params, [&](const std::string&, const Tensor<float>& t, ParamGroup) { n += t.size(); });
  return n;
}

template <class T>
void check_shapes(const BasicParams<T>& params, const ModelConfig& config) {
  const BasicParams<T> ref = zeros_like<T>(config);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> want;
  visit_params(ref, [&](const std::string& name, const Tensor<T>& t, ParamGroup) {
    want.emplace_back(name, t.shape);
  });
  std::size_t i = 0;
  bool ok = params.mlps.size() == ref.mlps.size() &&
            params.trunk.layers.size() == ref.trunk.layers.size();
  if (ok) {
    visit_params(params, [&](const std::string& name, const Tensor<T>& t, ParamGroup) {
      if (i >= want.size() || want[i].first != name || want[i].second != t.shape ||
          t.values.size() != Tensor<T>(t.shape).size())
        ok = false;
      ++i;
    });
  }
  require(ok && i == want.size(), ErrorCode::kShapeMismatch,
          "parameter shapes do not match the model config");
}

template void check_shapes<float>(const BasicParams<float>&, const ModelConfig&);
template void check_shapes<double>(const BasicParams<double>&, const ModelConfig&);

ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                     bool capture) {
  const auto net = engine::dense_view(params, config);
  engine::RouteSpec spec;
  spec.kind = RoutingPolicy::Kind::kDeterministicDomain;
  spec.domain = 0;
  const auto cache = engine::forward(net, batch, spec);
  ForwardTrace trace;
  const std::size_t b = batch.batch_size, t = batch.seq_len, h = config.hidden_size,
                    v = config.vocab_size;
  trace.logits = Tensor3(b, t, v);
  std::copy(cache.logits.begin(), cache.logits.end(), trace.logits.values().begin());
  if (capture) {
    for (const auto& lc : cache.layers) {
      Tensor3 f(b, t, h);
      std::copy(lc.m.begin(), lc.m.end(), f.values().begin());
      trace.features.push_back(std::move(f));
    }
  }
  std::tie(trace.loss_sum, trace.loss_tokens) =
      engine::next_token_loss<float>(cache.logits.data(), v, batch, nullptr, 1.0);
  return trace;
}

std::pair<double, std::size_t> lm_loss_sum(const Tensor3& logits, const Batch& batch) {
  require(logits.dim0() == batch.batch_size && logits.dim1() == batch.seq_len,
          ErrorCode::kShapeMismatch, "logits do not match the batch shape");
  return engine::next_token_loss<float>(logits.values().data(), logits.dim2(), batch, nullptr,
                                        1.0);
}

double lm_loss(const Tensor3& logits, const Batch& batch) {
  for (float z : logits.values())
    require(std::isfinite(z), ErrorCode::kNonFinite, "lm_loss: non-finite logits");
  const auto [sum, count] = lm_loss_sum(logits, batch);
  require(count > 0, ErrorCode::kInvalidArgument, "lm_loss: batch has no next-token positions");
  return sum / static_cast<double>(count);
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path, const std::string& config_hash) {
  check_shapes(params, config);
  container::Writer w({{"format", "moeup-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"kind", "dense"},
                       {"config", config},
                       {"config_hash", config_hash}});
  visit_params(params, [&](const std::string& name, const Tensor<float>& t, ParamGroup) {
    w.add(name, t.shape, std::span<const float>(t.values));
  });
  w.write(path, std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  container::Reader r(path, std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)),
                      kCheckpointVersion);
  require(r.header().value("kind", "") == "dense", ErrorCode::kShapeMismatch,
          path.string() + " is not a dense checkpoint");
  LoadedCheckpoint out;
  out.config = r.header().at("config").get<ModelConfig>();
  out.config.validate();
  out.config_hash = r.header().value("config_hash", "");
  out.params = zeros_like<float>(out.config);
  visit_params(out.params, [&](const std::string& name, Tensor<float>& t, ParamGroup) {
    t.values = r.f32(name, t.shape);
  });
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  LoadedCheckpoint out = load_checkpoint(path);
  require(out.config == expected, ErrorCode::kShapeMismatch,
          path.string() + ": checkpoint config (H=" + std::to_string(out.config.hidden_size) +
              ") does not match the requested config (H=" +
              std::to_string(expected.hidden_size) + ")");
  return out;
}

}  // namespace moeup
