// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/trainer.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "engine.hpp"
#include "moe_internal.hpp"
#include "moeup/error.hpp"
#include "moeup/rng.hpp"

namespace moeup {

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::kConfigError, "learning_rate must be > 0");
  require(total_steps >= 0 && warmup_steps >= 0 && warmup_steps <= total_steps,
          ErrorCode::kConfigError, "need 0 <= warmup_steps <= total_steps");
  require(batch_size > 0 && seq_len > 0 && grad_accum > 0, ErrorCode::kConfigError,
          "batch_size, seq_len and grad_accum must be > 0");
  require(min_lr_fraction >= 0.0 && min_lr_fraction <= 1.0, ErrorCode::kConfigError,
          "min_lr_fraction must be in [0, 1]");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0,
          ErrorCode::kConfigError, "invalid Adam hyperparameters");
}

double lr_at(const TrainConfig& c, long step) {
  if (step < c.warmup_steps)
    return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  const double floor = c.learning_rate * c.min_lr_fraction;
  const long span = std::max(1L, c.total_steps - c.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return floor + (c.learning_rate - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void write_loss_csv(std::ostream& out, std::span<const LossPoint> history) {
  out << "step,lr,loss\n";
  out.precision(17);
  for (const auto& p : history) out << p.step << ',' << p.lr << ',' << p.loss << '\n';
}

namespace {

template <class T>
BasicParams<T> to_params(engine::Grads<T>&& g) {
  BasicParams<T> p;
  p.trunk = std::move(g.trunk);
  for (auto& layer : g.experts) p.mlps.push_back(std::move(layer.front()));
  return p;
}

template <class T>
void check_finite(const BasicParams<T>& grads) {
  visit_params(grads, [](const std::string& name, const Tensor<T>& t, ParamGroup) {
    for (T v : t.values)
      require(std::isfinite(static_cast<double>(v)), ErrorCode::kNonFinite,
              "non-finite gradient in " + name);
  });
}

// Cycles through epochs of interleaved train batches.
class BatchCursor {
 public:
  BatchCursor(std::span<const DomainCorpus> corpora, const TrainConfig& c)
      : corpora_(corpora.begin(), corpora.end()), config_(c) {}

  const Batch& next() {
    if (pos_ >= epoch_.size()) {
      epoch_ = make_mixed_batches(corpora_, Split::kTrain, config_.batch_size, config_.seq_len,
                                  hash_combine(config_.seed, epoch_index_++));
      pos_ = 0;
    }
    return epoch_[pos_++];
  }

 private:
  std::vector<DomainCorpus> corpora_;
  TrainConfig config_;
  std::vector<Batch> epoch_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_index_ = 0;
};

struct Adam {
  double beta1, beta2, eps;
  long t = 0;

  template <class V, class G>
  void update(V& param, const G& grad, std::vector<double>& m, std::vector<double>& v, double lr,
              double grad_scale) const {
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * grad_scale;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double step = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      param[i] = static_cast<std::remove_reference_t<decltype(param[i])>>(param[i] - step);
    }
  }
};

double clip_scale(double sq_norm, double clip) {
  const double norm = std::sqrt(sq_norm);
  return (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
}

}  // namespace

template <class T>
GradientResult<T> compute_gradients(const BasicParams<T>& params, const ModelConfig& config,
                                    const Batch& batch) {
  const auto net = engine::dense_view(params, config);
  engine::RouteSpec spec;
  spec.domain = 0;
  const auto cache = engine::forward(net, batch, spec);
  std::vector<T> dlogits;
  auto [sum, count] =
      engine::next_token_loss<T>(cache.logits.data(), config.vocab_size, batch, nullptr, 1.0);
  const double scale = count == 0 ? 0.0 : 1.0 / static_cast<double>(count);
  engine::next_token_loss<T>(cache.logits.data(), config.vocab_size, batch, &dlogits, scale);
  auto grads = engine::make_grads(net, true, true, false);
  engine::backward(net, cache, batch, dlogits, grads);
  GradientResult<T> out;
  out.loss = sum * scale;
  out.tokens = count;
  out.grads = to_params(std::move(grads));
  check_finite(out.grads);
  return out;
}

template GradientResult<float> compute_gradients<float>(const BasicParams<float>&,
                                                        const ModelConfig&, const Batch&);
template GradientResult<double> compute_gradients<double>(const BasicParams<double>&,
                                                          const ModelConfig&, const Batch&);

template <class T>
double batch_loss(const BasicParams<T>& params, const ModelConfig& config, const Batch& batch) {
  const auto net = engine::dense_view(params, config);
  engine::RouteSpec spec;
  spec.domain = 0;
  const auto cache = engine::forward(net, batch, spec);
  const auto [sum, count] =
      engine::next_token_loss<T>(cache.logits.data(), config.vocab_size, batch, nullptr, 1.0);
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

template double batch_loss<float>(const BasicParams<float>&, const ModelConfig&, const Batch&);
template double batch_loss<double>(const BasicParams<double>&, const ModelConfig&, const Batch&);

RouterGradients router_gradients(const MoEModel& moe, const Batch& batch, int top_k) {
  const auto net = detail_moe::moe_view(moe);
  const auto spec = detail_moe::route_spec(moe, batch, RoutingPolicy::learned(top_k));
  const auto cache = engine::forward(net, batch, spec);
  const std::size_t v = moe.config.vocab_size;
  std::vector<float> dlogits;
  const auto [sum, count] = engine::next_token_loss<float>(cache.logits.data(), v, batch, nullptr, 1.0);
  const double scale = count == 0 ? 0.0 : 1.0 / static_cast<double>(count);
  engine::next_token_loss<float>(cache.logits.data(), v, batch, &dlogits, scale);
  auto grads = engine::make_grads(net, false, false, true);
  engine::backward(net, cache, batch, dlogits, grads);
  return {sum * scale, std::move(grads.routers)};
}

TrainResult train(ModelParams params, const ModelConfig& model_config,
                  std::span<const DomainCorpus> corpora, const TrainConfig& config,
                  const ProgressFn& progress) {
  config.validate();
  require(config.trainable == Trainable::kAll, ErrorCode::kConfigError,
          "dense training updates all parameters");
  require(!corpora.empty(), ErrorCode::kInvalidArgument, "no training corpora");
  check_shapes(params, model_config);
  TrainResult result;
  if (config.total_steps == 0) {
    result.params = std::move(params);
    return result;
  }

  std::vector<Tensor<float>*> slots;
  visit_params(params, [&](const std::string&, Tensor<float>& t, ParamGroup) { slots.push_back(&t); });
  std::vector<std::vector<double>> m(slots.size()), v(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    m[i].assign(slots[i]->size(), 0.0);
    v[i].assign(slots[i]->size(), 0.0);
  }
  Adam adam{config.beta1, config.beta2, config.eps};
  BatchCursor cursor(corpora, config);

  for (long step = 0; step < config.total_steps; ++step) {
    const double lr = lr_at(config, step);
    BasicParams<float> acc = zeros_like<float>(model_config);
    double loss = 0.0;
    for (int a = 0; a < config.grad_accum; ++a) {
      const Batch& batch = cursor.next();
      auto g = compute_gradients(params, model_config, batch);
      loss += g.loss / config.grad_accum;
      std::vector<Tensor<float>*> dst;
      visit_params(acc, [&](const std::string&, Tensor<float>& t, ParamGroup) { dst.push_back(&t); });
      std::size_t i = 0;
      visit_params(g.grads, [&](const std::string&, const Tensor<float>& t, ParamGroup) {
        auto& d = dst[i++]->values;
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += t.values[j] / config.grad_accum;
      });
    }
    if (!std::isfinite(loss)) throw DivergenceError(step);

    double sq = 0.0;
    std::vector<const Tensor<float>*> gs;
    visit_params(acc, [&](const std::string&, const Tensor<float>& t, ParamGroup) {
      gs.push_back(&t);
      for (float x : t.values) sq += double(x) * double(x);
    });
    const double scale = clip_scale(sq, config.grad_clip);
    ++adam.t;
    for (std::size_t i = 0; i < slots.size(); ++i)
      adam.update(slots[i]->values, gs[i]->values, m[i], v[i], lr, scale);

    LossPoint point{step, lr, loss};
    result.history.push_back(point);
    if (progress) progress(point);
  }
  result.params = std::move(params);
  return result;
}

RouterFinetuneResult finetune_routers(MoEModel moe, std::span<const DomainCorpus> corpora,
                                      const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  require(config.trainable == Trainable::kRoutersOnly, ErrorCode::kConfigError,
          "router finetuning requires the routers-only selector");
  require(moe.routers_initialized(), ErrorCode::kInvalidArgument,
          "router finetuning needs initialized routers");
  require(!corpora.empty(), ErrorCode::kInvalidArgument, "no training corpora");
  RouterFinetuneResult result;
  const std::size_t layers = moe.routers.size();
  std::vector<std::vector<double>> m(layers), v(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    m[l].assign(moe.routers[l].size(), 0.0);
    v[l].assign(moe.routers[l].size(), 0.0);
  }
  Adam adam{config.beta1, config.beta2, config.eps};
  BatchCursor cursor(corpora, config);

  for (long step = 0; step < config.total_steps; ++step) {
    const double lr = lr_at(config, step);
    std::vector<Matrix> acc;
    for (const auto& w : moe.routers) acc.emplace_back(w.rows(), w.cols());
    double loss = 0.0;
    for (int a = 0; a < config.grad_accum; ++a) {
      auto g = router_gradients(moe, cursor.next());
      loss += g.loss / config.grad_accum;
      for (std::size_t l = 0; l < layers; ++l) {
        auto dst = acc[l].values();
        auto src = g.routers[l].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] / config.grad_accum;
      }
    }
    if (!std::isfinite(loss)) throw DivergenceError(step);
    double sq = 0.0;
    for (const auto& g : acc) {
      require(g.all_finite(), ErrorCode::kNonFinite, "non-finite router gradient");
      for (double x : g.values()) sq += x * x;
    }
    const double scale = clip_scale(sq, config.grad_clip);
    ++adam.t;
    for (std::size_t l = 0; l < layers; ++l) {
      auto w = moe.routers[l].values();
      adam.update(w, acc[l].values(), m[l], v[l], lr, scale);
    }
    LossPoint point{step, lr, loss};
    result.history.push_back(point);
    if (progress) progress(point);
  }
  result.moe = std::move(moe);
  return result;
}

}  // namespace moeup
