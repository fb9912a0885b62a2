// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

// Transformer forward/backward shared by dense experts and merged MoE models.
// A dense model is run as an MoE with one expert per layer and fixed routing,
// so both paths execute identical arithmetic.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "moeup/corpus.hpp"
#include "moeup/counters.hpp"
#include "moeup/error.hpp"
#include "moeup/model.hpp"
#include "moeup/moe.hpp"
#include "moeup/rng.hpp"

namespace moeup::engine {

using Index = Eigen::Index;

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

template <class T>
inline MapR<T> view(T* p, Index rows, Index cols, Index ld) {
  return MapR<T>(p, rows, cols, Eigen::OuterStride<>(ld));
}
template <class T>
inline CMapR<T> view(const T* p, Index rows, Index cols, Index ld) {
  return CMapR<T>(p, rows, cols, Eigen::OuterStride<>(ld));
}
template <class T>
inline MapR<T> view(std::vector<T>& v, Index rows, Index cols) {
  return view(v.data(), rows, cols, cols);
}
template <class T>
inline CMapR<T> view(const std::vector<T>& v, Index rows, Index cols) {
  return view(v.data(), rows, cols, cols);
}
template <class T>
inline MapR<T> view(Tensor<T>& t) {
  return view(t.data(), Index(t.shape[0]), Index(t.shape[1]), Index(t.shape[1]));
}
template <class T>
inline CMapR<T> view(const Tensor<T>& t) {
  return view(t.data(), Index(t.shape[0]), Index(t.shape[1]), Index(t.shape[1]));
}

inline constexpr double kRmsEps = 1e-5;
inline constexpr double kRopeBase = 10000.0;

/// Routing decision procedure for one forward call.
struct RouteSpec {
  RoutingPolicy::Kind kind = RoutingPolicy::Kind::kDeterministicDomain;
  int top_k = 1;
  std::uint64_t seed = 0;
  int domain = 0;
};

template <class T>
struct NetView {
  const ModelConfig* config = nullptr;
  const Trunk<T>* trunk = nullptr;
  std::vector<std::vector<const MlpBlock<T>*>> experts;  // [layer][expert]
  const std::vector<Matrix>* routers = nullptr;

  int num_experts() const { return static_cast<int>(experts.front().size()); }
};

template <class T>
NetView<T> dense_view(const BasicParams<T>& p, const ModelConfig& config) {
  NetView<T> v;
  v.config = &config;
  v.trunk = &p.trunk;
  v.experts.resize(p.mlps.size());
  for (std::size_t l = 0; l < p.mlps.size(); ++l) v.experts[l] = {&p.mlps[l]};
  return v;
}

template <class T>
struct LayerCache {
  std::vector<T> x, a, rinv_a, q, k, v, probs, attn, h1, m, rinv_m;
  int top_k = 1;
  std::vector<int> sel;              // N x top_k
  std::vector<T> gate;               // N x top_k
  std::vector<double> route_probs;   // N x D, learned routing only
  std::vector<std::vector<std::uint32_t>> rows;   // per expert
  std::vector<std::vector<std::uint32_t>> slots;  // per expert, index into sel/gate
  std::vector<std::vector<T>> g, u, y;            // per expert activations
};

template <class T>
struct Cache {
  std::size_t batch = 0, seq = 0, n = 0;
  RouteSpec route;
  std::vector<LayerCache<T>> layers;
  std::vector<T> h_final, f, rinv_f, logits;
};

template <class T>
struct Grads {
  bool trunk_on = false, experts_on = false, routers_on = false;
  Trunk<T> trunk;
  std::vector<std::vector<MlpBlock<T>>> experts;
  std::vector<Matrix> routers;
};

template <class T>
Tensor<T> zeros_of(const Tensor<T>& t) {
  return Tensor<T>(t.shape);
}

template <class T>
Grads<T> make_grads(const NetView<T>& net, bool trunk, bool experts, bool routers) {
  Grads<T> g;
  g.trunk_on = trunk;
  g.experts_on = experts;
  g.routers_on = routers;
  if (trunk) {
    g.trunk = *net.trunk;
    visit_trunk(g.trunk, [](const std::string&, Tensor<T>& t) {
      std::fill(t.values.begin(), t.values.end(), T(0));
    });
  }
  if (experts) {
    g.experts.resize(net.experts.size());
    for (std::size_t l = 0; l < net.experts.size(); ++l)
      for (const auto* e : net.experts[l])
        g.experts[l].push_back({zeros_of(e->w_gate), zeros_of(e->w_up), zeros_of(e->w_down)});
  }
  if (routers && net.routers) {
    for (const auto& w : *net.routers) g.routers.emplace_back(w.rows(), w.cols());
  }
  return g;
}

template <class T>
inline T silu(T a) {
  return a / (T(1) + std::exp(-a));
}
template <class T>
inline T sigmoid(T a) {
  return T(1) / (T(1) + std::exp(-a));
}

template <class T>
void rmsnorm_forward(const std::vector<T>& x, const Tensor<T>& w, std::vector<T>& out,
                     std::vector<T>& rinv, std::size_t n, std::size_t h) {
  out.resize(n * h);
  rinv.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * h;
    T ss = 0;
    for (std::size_t j = 0; j < h; ++j) ss += xr[j] * xr[j];
    const T ri = T(1) / std::sqrt(ss / T(h) + T(kRmsEps));
    rinv[r] = ri;
    T* o = out.data() + r * h;
    for (std::size_t j = 0; j < h; ++j) o[j] = xr[j] * ri * w.values[j];
  }
}

// Adds d(input) into dx; accumulates dw when non-null.
template <class T>
void rmsnorm_backward(const std::vector<T>& dy, const std::vector<T>& x, const Tensor<T>& w,
                      const std::vector<T>& rinv, std::vector<T>& dx, Tensor<T>* dw,
                      std::size_t n, std::size_t h) {
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * h;
    const T* dyr = dy.data() + r * h;
    T* dxr = dx.data() + r * h;
    const T ri = rinv[r];
    T dot = 0;
    for (std::size_t j = 0; j < h; ++j) dot += dyr[j] * w.values[j] * xr[j];
    const T coef = ri * ri * ri * dot / T(h);
    for (std::size_t j = 0; j < h; ++j) dxr[j] += ri * w.values[j] * dyr[j] - xr[j] * coef;
    if (dw) {
      for (std::size_t j = 0; j < h; ++j) dw->values[j] += dyr[j] * xr[j] * ri;
    }
  }
}

template <class T>
struct Rope {
  std::size_t half = 0;
  std::vector<T> cos, sin;  // [seq x half]

  Rope(std::size_t seq, std::size_t head_dim) : half(head_dim / 2) {
    cos.resize(seq * half);
    sin.resize(seq * half);
    for (std::size_t t = 0; t < seq; ++t) {
      for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(kRopeBase, -2.0 * double(i) / double(head_dim));
        cos[t * half + i] = T(std::cos(double(t) * freq));
        sin[t * half + i] = T(std::sin(double(t) * freq));
      }
    }
  }

  // Rotates every head of every row in place; `sign` = -1 applies the inverse.
  void apply(std::vector<T>& x, std::size_t n, std::size_t seq, std::size_t heads,
             std::size_t hidden, T sign) const {
    const std::size_t hd = hidden / heads;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t t = r % seq;
      const T* c = cos.data() + t * half;
      const T* s = sin.data() + t * half;
      for (std::size_t hh = 0; hh < heads; ++hh) {
        T* p = x.data() + r * hidden + hh * hd;
        for (std::size_t i = 0; i < half; ++i) {
          const T x0 = p[i];
          const T x1 = p[i + half];
          const T si = sign * s[i];
          p[i] = x0 * c[i] - x1 * si;
          p[i + half] = x0 * si + x1 * c[i];
        }
      }
    }
  }
};

inline std::uint64_t batch_salt(const Batch& batch) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int t : batch.tokens) h = (h ^ static_cast<std::uint64_t>(t)) * 1099511628211ULL;
  return h;
}

template <class T>
void route_layer(const NetView<T>& net, const RouteSpec& spec, std::size_t l,
                 LayerCache<T>& lc, std::size_t n, std::uint64_t salt) {
  const int experts = net.num_experts();
  const std::size_t h = static_cast<std::size_t>(net.config->hidden_size);
  const int k = spec.top_k;
  lc.top_k = k;
  lc.sel.assign(n * k, 0);
  lc.gate.assign(n * k, T(1));
  switch (spec.kind) {
    case RoutingPolicy::Kind::kOracle:
    case RoutingPolicy::Kind::kDeterministicDomain:
      require(spec.domain >= 0 && spec.domain < experts, ErrorCode::kInvalidArgument,
              "batch domain id " + std::to_string(spec.domain) + " has no expert");
      std::fill(lc.sel.begin(), lc.sel.end(), spec.domain);
      break;
    case RoutingPolicy::Kind::kRandom: {
      const std::uint64_t base = hash_combine(hash_combine(spec.seed, salt), l);
      for (std::size_t r = 0; r < n; ++r)
        lc.sel[r] = static_cast<int>(hash_combine(base, r) % static_cast<std::uint64_t>(experts));
      break;
    }
    case RoutingPolicy::Kind::kLearned: {
      require(net.routers != nullptr && net.routers->size() == net.experts.size(),
              ErrorCode::kInvalidArgument, "learned routing requires initialized routers");
      detail::count_router_read();
      const Matrix& w = (*net.routers)[l];
      lc.route_probs.assign(n * experts, 0.0);
      std::vector<double> logits(experts);
      std::vector<int> order(experts);
      for (std::size_t r = 0; r < n; ++r) {
        std::fill(logits.begin(), logits.end(), 0.0);
        const T* xr = lc.m.data() + r * h;
        for (std::size_t j = 0; j < h; ++j) {
          const double xj = static_cast<double>(xr[j]);
          auto wj = w.row(j);
          for (int d = 0; d < experts; ++d) logits[d] += xj * wj[d];
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double* p = lc.route_probs.data() + r * experts;
        double sum = 0.0;
        for (int d = 0; d < experts; ++d) {
          p[d] = std::exp(logits[d] - mx);
          sum += p[d];
        }
        for (int d = 0; d < experts; ++d) p[d] /= sum;
        std::iota(order.begin(), order.end(), 0);
        // Ties go to the lowest expert index.
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return logits[a] > logits[b]; });
        double selected = 0.0;
        for (int s = 0; s < k; ++s) selected += p[order[s]];
        for (int s = 0; s < k; ++s) {
          lc.sel[r * k + s] = order[s];
          lc.gate[r * k + s] = static_cast<T>(p[order[s]] / selected);
        }
      }
      break;
    }
  }
}

template <class T>
void attention_forward(const ModelConfig& cfg, LayerCache<T>& lc, std::size_t batch,
                       std::size_t seq) {
  const std::size_t h = cfg.hidden_size, heads = cfg.n_heads, hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(T(hd));
  lc.probs.assign(batch * heads * seq * seq, T(0));
  lc.attn.assign(batch * seq * h, T(0));
  MatR<T> s(seq, seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t off = b * seq * h + hh * hd;
      auto q = view(lc.q.data() + off, Index(seq), Index(hd), Index(h));
      auto k = view(lc.k.data() + off, Index(seq), Index(hd), Index(h));
      auto v = view(lc.v.data() + off, Index(seq), Index(hd), Index(h));
      s.noalias() = q * k.transpose();
      T* p = lc.probs.data() + (b * heads + hh) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        T mx = s(i, 0) * scale;
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, s(i, j) * scale);
        T sum = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T e = std::exp(s(i, j) * scale - mx);
          p[i * seq + j] = e;
          sum += e;
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j <= i; ++j) p[i * seq + j] *= inv;
      }
      auto pm = view(static_cast<const T*>(p), Index(seq), Index(seq), Index(seq));
      auto o = view(lc.attn.data() + off, Index(seq), Index(hd), Index(h));
      o.noalias() = pm * v;
    }
  }
}

template <class T>
void experts_forward(const NetView<T>& net, std::size_t l, LayerCache<T>& lc, std::size_t n,
                     std::vector<T>& out) {
  const std::size_t h = net.config->hidden_size, f = net.config->mlp_hidden;
  const int experts = net.num_experts();
  const int k = lc.top_k;
  lc.rows.assign(experts, {});
  lc.slots.assign(experts, {});
  for (std::size_t r = 0; r < n; ++r)
    for (int s = 0; s < k; ++s) {
      const int e = lc.sel[r * k + s];
      lc.rows[e].push_back(static_cast<std::uint32_t>(r));
      lc.slots[e].push_back(static_cast<std::uint32_t>(r * k + s));
    }
  lc.g.assign(experts, {});
  lc.u.assign(experts, {});
  lc.y.assign(experts, {});
  std::vector<T> xg;
  for (int e = 0; e < experts; ++e) {
    const auto& rows = lc.rows[e];
    const std::size_t ne = rows.size();
    if (ne == 0) continue;
    const MlpBlock<T>& mlp = *net.experts[l][e];
    xg.resize(ne * h);
    for (std::size_t i = 0; i < ne; ++i)
      std::copy_n(lc.m.data() + rows[i] * h, h, xg.data() + i * h);
    auto& g = lc.g[e];
    auto& u = lc.u[e];
    auto& y = lc.y[e];
    g.resize(ne * f);
    u.resize(ne * f);
    y.resize(ne * h);
    auto xm = view(static_cast<const std::vector<T>&>(xg), Index(ne), Index(h));
    view(g, Index(ne), Index(f)).noalias() = xm * view(mlp.w_gate);
    view(u, Index(ne), Index(f)).noalias() = xm * view(mlp.w_up);
    std::vector<T> z(ne * f);
    for (std::size_t i = 0; i < ne * f; ++i) z[i] = silu(g[i]) * u[i];
    view(y, Index(ne), Index(h)).noalias() =
        view(static_cast<const std::vector<T>&>(z), Index(ne), Index(f)) * view(mlp.w_down);
    for (std::size_t i = 0; i < ne; ++i) {
      const T gt = lc.gate[lc.slots[e][i]];
      T* dst = out.data() + rows[i] * h;
      const T* src = y.data() + i * h;
      for (std::size_t j = 0; j < h; ++j) dst[j] += gt * src[j];
    }
  }
}

template <class T>
Cache<T> forward(const NetView<T>& net, const Batch& batch, const RouteSpec& spec) {
  const ModelConfig& cfg = *net.config;
  require(batch.seq_len <= static_cast<std::size_t>(cfg.max_seq_len), ErrorCode::kShapeMismatch,
          "batch seq_len " + std::to_string(batch.seq_len) + " exceeds max_seq_len");
  require(batch.tokens.size() == batch.batch_size * batch.seq_len &&
              batch.mask.size() == batch.tokens.size(),
          ErrorCode::kShapeMismatch, "batch token/mask sizes are inconsistent");
  for (int t : batch.tokens)
    require(t >= 0 && t < cfg.vocab_size, ErrorCode::kInvalidArgument,
            "token id " + std::to_string(t) + " outside the vocabulary");
  detail::count_forward();

  Cache<T> c;
  c.batch = batch.batch_size;
  c.seq = batch.seq_len;
  c.n = c.batch * c.seq;
  c.route = spec;
  const std::size_t n = c.n, h = cfg.hidden_size, v = cfg.vocab_size;
  const Rope<T> rope(c.seq, cfg.head_dim());
  const std::uint64_t salt = spec.kind == RoutingPolicy::Kind::kRandom ? batch_salt(batch) : 0;

  std::vector<T> hcur(n * h);
  const Trunk<T>& tr = *net.trunk;
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(tr.tok_embeddings.data() + std::size_t(batch.tokens[r]) * h, h,
                hcur.data() + r * h);

  c.layers.resize(net.experts.size());
  for (std::size_t l = 0; l < net.experts.size(); ++l) {
    LayerCache<T>& lc = c.layers[l];
    const AttentionBlock<T>& blk = tr.layers[l];
    lc.x = hcur;
    rmsnorm_forward(lc.x, blk.attention_norm, lc.a, lc.rinv_a, n, h);
    lc.q.resize(n * h);
    lc.k.resize(n * h);
    lc.v.resize(n * h);
    auto am = view(static_cast<const std::vector<T>&>(lc.a), Index(n), Index(h));
    view(lc.q, Index(n), Index(h)).noalias() = am * view(blk.wq);
    view(lc.k, Index(n), Index(h)).noalias() = am * view(blk.wk);
    view(lc.v, Index(n), Index(h)).noalias() = am * view(blk.wv);
    rope.apply(lc.q, n, c.seq, cfg.n_heads, h, T(1));
    rope.apply(lc.k, n, c.seq, cfg.n_heads, h, T(1));
    attention_forward(cfg, lc, c.batch, c.seq);
    lc.h1 = lc.x;
    view(lc.h1, Index(n), Index(h)).noalias() +=
        view(static_cast<const std::vector<T>&>(lc.attn), Index(n), Index(h)) * view(blk.wo);
    rmsnorm_forward(lc.h1, blk.ffn_norm, lc.m, lc.rinv_m, n, h);
    route_layer(net, spec, l, lc, n, salt);
    hcur = lc.h1;
    experts_forward(net, l, lc, n, hcur);
  }
  c.h_final = std::move(hcur);
  rmsnorm_forward(c.h_final, tr.norm, c.f, c.rinv_f, n, h);
  c.logits.resize(n * v);
  view(c.logits, Index(n), Index(v)).noalias() =
      view(static_cast<const std::vector<T>&>(c.f), Index(n), Index(h)) * view(tr.output);
  return c;
}

/// Cross-entropy over positions whose next token is real. When `dlogits` is
/// non-null it receives d(sum * scale)/d(logits).
template <class T>
std::pair<double, std::size_t> next_token_loss(const T* logits, std::size_t vocab,
                                               const Batch& batch, std::vector<T>* dlogits,
                                               double scale) {
  const std::size_t seq = batch.seq_len;
  const std::size_t n = batch.batch_size * seq;
  if (dlogits) dlogits->assign(n * vocab, T(0));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t t = r % seq;
    if (t + 1 >= seq || !batch.mask[r + 1]) continue;
    const int target = batch.tokens[r + 1];
    const T* z = logits + r * vocab;
    const T mx = *std::max_element(z, z + vocab);
    double sum = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(double(z[j] - mx));
    const double lse = double(mx) + std::log(sum);
    total += lse - double(z[target]);
    ++count;
    if (dlogits) {
      T* d = dlogits->data() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j)
        d[j] = static_cast<T>(std::exp(double(z[j]) - lse) * scale);
      d[target] -= static_cast<T>(scale);
    }
  }
  return {total, count};
}

template <class T>
void attention_backward(const ModelConfig& cfg, const LayerCache<T>& lc,
                        const std::vector<T>& dattn, std::vector<T>& dq, std::vector<T>& dk,
                        std::vector<T>& dv, std::size_t batch, std::size_t seq) {
  const std::size_t h = cfg.hidden_size, heads = cfg.n_heads, hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(T(hd));
  MatR<T> dp(seq, seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t off = b * seq * h + hh * hd;
      auto q = view(lc.q.data() + off, Index(seq), Index(hd), Index(h));
      auto k = view(lc.k.data() + off, Index(seq), Index(hd), Index(h));
      auto v = view(lc.v.data() + off, Index(seq), Index(hd), Index(h));
      auto doh = view(dattn.data() + off, Index(seq), Index(hd), Index(h));
      const T* pp = lc.probs.data() + (b * heads + hh) * seq * seq;
      auto p = view(pp, Index(seq), Index(seq), Index(seq));
      dp.noalias() = doh * v.transpose();
      view(dv.data() + off, Index(seq), Index(hd), Index(h)).noalias() = p.transpose() * doh;
      for (std::size_t i = 0; i < seq; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j <= i; ++j) dot += dp(i, j) * pp[i * seq + j];
        for (std::size_t j = 0; j <= i; ++j) dp(i, j) = pp[i * seq + j] * (dp(i, j) - dot) * scale;
        for (std::size_t j = i + 1; j < seq; ++j) dp(i, j) = 0;
      }
      view(dq.data() + off, Index(seq), Index(hd), Index(h)).noalias() = dp * k;
      view(dk.data() + off, Index(seq), Index(hd), Index(h)).noalias() = dp.transpose() * q;
    }
  }
}

/// Reverse pass given d(loss)/d(logits). Accumulates into `grads`.
template <class T>
void backward(const NetView<T>& net, const Cache<T>& c, const Batch& batch,
              const std::vector<T>& dlogits, Grads<T>& grads) {
  detail::count_backward();
  const ModelConfig& cfg = *net.config;
  const Trunk<T>& tr = *net.trunk;
  const std::size_t n = c.n, h = cfg.hidden_size, v = cfg.vocab_size, f = cfg.mlp_hidden;
  const int experts = net.num_experts();
  const Rope<T> rope(c.seq, cfg.head_dim());
  const bool learned = c.route.kind == RoutingPolicy::Kind::kLearned;

  auto dl = view(dlogits, Index(n), Index(v));
  if (grads.trunk_on)
    view(grads.trunk.output).noalias() +=
        view(c.f, Index(n), Index(h)).transpose() * dl;
  std::vector<T> df(n * h);
  view(df, Index(n), Index(h)).noalias() = dl * view(tr.output).transpose();
  std::vector<T> dh(n * h, T(0));
  rmsnorm_backward(df, c.h_final, tr.norm, c.rinv_f, dh,
                   grads.trunk_on ? &grads.trunk.norm : nullptr, n, h);

  std::vector<T> dm, dh1, dattn, dq, dk, dv, da, dx, xg, dy, z, dz, dg, du, dxe;
  for (std::size_t li = net.experts.size(); li-- > 0;) {
    const LayerCache<T>& lc = c.layers[li];
    const AttentionBlock<T>& blk = tr.layers[li];
    const int k = lc.top_k;
    dh1 = dh;
    dm.assign(n * h, T(0));
    std::vector<T> dgate(n * k, T(0));

    for (int e = 0; e < experts; ++e) {
      const auto& rows = lc.rows[e];
      const std::size_t ne = rows.size();
      if (ne == 0) continue;
      const MlpBlock<T>& mlp = *net.experts[li][e];
      const auto& g = lc.g[e];
      const auto& u = lc.u[e];
      const auto& y = lc.y[e];
      dy.resize(ne * h);
      for (std::size_t i = 0; i < ne; ++i) {
        const std::uint32_t slot = lc.slots[e][i];
        const T gt = lc.gate[slot];
        const T* src = dh.data() + rows[i] * h;
        const T* yi = y.data() + i * h;
        T dot = 0;
        for (std::size_t j = 0; j < h; ++j) {
          dy[i * h + j] = gt * src[j];
          dot += src[j] * yi[j];
        }
        dgate[slot] = dot;
      }
      dz.resize(ne * f);
      view(dz, Index(ne), Index(f)).noalias() =
          view(static_cast<const std::vector<T>&>(dy), Index(ne), Index(h)) *
          view(mlp.w_down).transpose();
      z.resize(ne * f);
      dg.resize(ne * f);
      du.resize(ne * f);
      for (std::size_t i = 0; i < ne * f; ++i) {
        const T sg = sigmoid(g[i]);
        const T s = g[i] * sg;
        z[i] = s * u[i];
        du[i] = dz[i] * s;
        dg[i] = dz[i] * u[i] * sg * (T(1) + g[i] * (T(1) - sg));
      }
      xg.resize(ne * h);
      for (std::size_t i = 0; i < ne; ++i)
        std::copy_n(lc.m.data() + rows[i] * h, h, xg.data() + i * h);
      auto xm = view(static_cast<const std::vector<T>&>(xg), Index(ne), Index(h));
      auto dgm = view(static_cast<const std::vector<T>&>(dg), Index(ne), Index(f));
      auto dum = view(static_cast<const std::vector<T>&>(du), Index(ne), Index(f));
      if (grads.experts_on) {
        auto& ge = grads.experts[li][e];
        view(ge.w_down).noalias() += view(static_cast<const std::vector<T>&>(z), Index(ne),
                                          Index(f)).transpose() *
                                     view(static_cast<const std::vector<T>&>(dy), Index(ne),
                                          Index(h));
        view(ge.w_gate).noalias() += xm.transpose() * dgm;
        view(ge.w_up).noalias() += xm.transpose() * dum;
      }
      dxe.resize(ne * h);
      auto dxm = view(dxe, Index(ne), Index(h));
      dxm.noalias() = dgm * view(mlp.w_gate).transpose();
      dxm.noalias() += dum * view(mlp.w_up).transpose();
      for (std::size_t i = 0; i < ne; ++i) {
        T* dst = dm.data() + rows[i] * h;
        const T* src = dxe.data() + i * h;
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
    }

    if (learned) {
      const Matrix& w = (*net.routers)[li];
      Matrix* gw = grads.routers_on ? &grads.routers[li] : nullptr;
      std::vector<double> dlog(experts);
      for (std::size_t r = 0; r < n; ++r) {
        const double* p = lc.route_probs.data() + r * experts;
        std::fill(dlog.begin(), dlog.end(), 0.0);
        bool any = false;
        if (k == 1) {
          // The renormalized top-1 gate is constant; its gradient is taken
          // through the selected softmax probability, d log p_sel.
          const double dgs = static_cast<double>(dgate[r]);
          if (dgs != 0.0) {
            any = true;
            const int s = lc.sel[r];
            for (int d = 0; d < experts; ++d) dlog[d] = dgs * ((d == s ? 1.0 : 0.0) - p[d]);
          }
        } else {
          double gsum = 0.0;
          for (int s = 0; s < k; ++s)
            gsum += static_cast<double>(lc.gate[r * k + s]) * static_cast<double>(dgate[r * k + s]);
          for (int s = 0; s < k; ++s) {
            const double gs = static_cast<double>(lc.gate[r * k + s]);
            const double val = gs * (static_cast<double>(dgate[r * k + s]) - gsum);
            dlog[lc.sel[r * k + s]] = val;
            any = any || val != 0.0;
          }
        }
        if (!any) continue;
        const T* xr = lc.m.data() + r * h;
        T* dmr = dm.data() + r * h;
        for (std::size_t j = 0; j < h; ++j) {
          auto wj = w.row(j);
          double acc = 0.0;
          for (int d = 0; d < experts; ++d) acc += wj[d] * dlog[d];
          dmr[j] += static_cast<T>(acc);
          if (gw) {
            const double xj = static_cast<double>(xr[j]);
            auto gj = gw->row(j);
            for (int d = 0; d < experts; ++d) gj[d] += xj * dlog[d];
          }
        }
      }
    }

    rmsnorm_backward(dm, lc.h1, blk.ffn_norm, lc.rinv_m, dh1,
                     grads.trunk_on ? &grads.trunk.layers[li].ffn_norm : nullptr, n, h);

    // Nothing below the first block's MLP needs gradients when the trunk is frozen.
    if (li == 0 && !grads.trunk_on && !grads.experts_on) return;

    auto dh1m = view(static_cast<const std::vector<T>&>(dh1), Index(n), Index(h));
    if (grads.trunk_on)
      view(grads.trunk.layers[li].wo).noalias() +=
          view(lc.attn, Index(n), Index(h)).transpose() * dh1m;
    dattn.resize(n * h);
    view(dattn, Index(n), Index(h)).noalias() = dh1m * view(blk.wo).transpose();
    dq.assign(n * h, T(0));
    dk.assign(n * h, T(0));
    dv.assign(n * h, T(0));
    attention_backward(cfg, lc, dattn, dq, dk, dv, c.batch, c.seq);
    rope.apply(dq, n, c.seq, cfg.n_heads, h, T(-1));
    rope.apply(dk, n, c.seq, cfg.n_heads, h, T(-1));
    auto am = view(lc.a, Index(n), Index(h));
    auto dqm = view(static_cast<const std::vector<T>&>(dq), Index(n), Index(h));
    auto dkm = view(static_cast<const std::vector<T>&>(dk), Index(n), Index(h));
    auto dvm = view(static_cast<const std::vector<T>&>(dv), Index(n), Index(h));
    if (grads.trunk_on) {
      auto& gb = grads.trunk.layers[li];
      view(gb.wq).noalias() += am.transpose() * dqm;
      view(gb.wk).noalias() += am.transpose() * dkm;
      view(gb.wv).noalias() += am.transpose() * dvm;
    }
    da.resize(n * h);
    auto dam = view(da, Index(n), Index(h));
    dam.noalias() = dqm * view(blk.wq).transpose();
    dam.noalias() += dkm * view(blk.wk).transpose();
    dam.noalias() += dvm * view(blk.wv).transpose();
    dx = dh1;
    rmsnorm_backward(da, lc.x, blk.attention_norm, lc.rinv_a, dx,
                     grads.trunk_on ? &grads.trunk.layers[li].attention_norm : nullptr, n, h);
    dh.swap(dx);
  }

  if (grads.trunk_on) {
    T* de = grads.trunk.tok_embeddings.data();
    for (std::size_t r = 0; r < n; ++r) {
      T* dst = de + std::size_t(batch.tokens[r]) * h;
      const T* src = dh.data() + r * h;
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  }
}

}  // namespace moeup::engine
