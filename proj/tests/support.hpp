// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "moeup/corpus.hpp"
#include "moeup/model.hpp"
#include "moeup/numerics.hpp"
#include "moeup/rng.hpp"

namespace moeup::testing {

inline ModelConfig tiny_config(int hidden = 8, int layers = 2, int heads = 2, int mlp = 16,
                               int seq = 16) {
  ModelConfig c;
  c.hidden_size = hidden;
  c.n_layers = layers;
  c.n_heads = heads;
  c.mlp_hidden = mlp;
  c.max_seq_len = seq;
  return c;
}

/// Random byte tokens; the last `pad` positions of every row are padding.
inline Batch random_batch(std::size_t rows, std::size_t seq, std::uint64_t seed, int domain = 0,
                          std::size_t pad = 0) {
  Rng rng(seed);
  Batch b;
  b.batch_size = rows;
  b.seq_len = seq;
  b.domain_id = domain;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < seq; ++t) {
      const bool real = t + pad < seq;
      b.tokens.push_back(real ? static_cast<int>(rng.below(256)) : kPadId);
      b.mask.push_back(real ? 1 : 0);
    }
  }
  return b;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

/// X^T X + n I for a random X: well conditioned and symmetric.
inline Matrix random_spd(std::size_t n, std::uint64_t seed) {
  const Matrix x = random_matrix(n + 3, n, seed);
  Matrix a = naive_matmul(x.transpose(), x);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += static_cast<double>(n);
  return a;
}

inline std::vector<DomainCorpus> synthetic_corpora(std::size_t domains, std::size_t size,
                                                   std::uint64_t seed) {
  std::vector<DomainCorpus> out;
  for (std::size_t d = 0; d < domains; ++d) {
    auto c = gen_synthetic_domain(kAllSyntheticKinds[d % kAllSyntheticKinds.size()], size,
                                  hash_combine(seed, d), static_cast<int>(d));
    c.name = to_string(kAllSyntheticKinds[d % kAllSyntheticKinds.size()]);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace moeup::testing
