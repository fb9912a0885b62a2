// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moeup/rng.hpp"

namespace moeup {

// Byte-level vocabulary: ids 0..255 are bytes, 256 is padding.
inline constexpr int kByteVocabSize = 257;
inline constexpr int kPadId = 256;

struct TokenSequence {
  std::vector<int> tokens;
  int domain_id = 0;

  std::size_t length() const noexcept { return tokens.size(); }
};

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);

struct DomainCorpus {
  int domain_id = 0;
  std::string name;
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> val;
  std::vector<TokenSequence> test;

  const std::vector<TokenSequence>& split(Split s) const;
};

/// A B x T block of token ids with the real-token mask. Every row in a batch
/// belongs to the same domain.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> tokens;      // batch_size * seq_len, pad-filled
  std::vector<std::uint8_t> mask;  // 1 exactly where tokens are real
  int domain_id = 0;

  int token(std::size_t b, std::size_t t) const { return tokens[b * seq_len + t]; }
  bool real(std::size_t b, std::size_t t) const { return mask[b * seq_len + t] != 0; }
  std::size_t real_tokens() const;
};

TokenSequence tokenize_bytes(std::string_view text, int domain_id = 0);
std::string detokenize(const TokenSequence& seq);

enum class SyntheticKind { kArith, kBrackets, kProse, kCaesar, kHexcode };

inline constexpr std::array<SyntheticKind, 5> kAllSyntheticKinds = {
    SyntheticKind::kArith, SyntheticKind::kBrackets, SyntheticKind::kProse,
    SyntheticKind::kCaesar, SyntheticKind::kHexcode};

const char* to_string(SyntheticKind kind);
/// Throws kUnknownKind for unrecognised names.
SyntheticKind parse_synthetic_kind(std::string_view name);

/// Generates one paragraph of the given style.
std::string synthetic_paragraph(SyntheticKind kind, Rng& rng);

/// `size` paragraphs split 80/10/10 into train/val/test. Deterministic in
/// (kind, size, seed).
DomainCorpus gen_synthetic_domain(SyntheticKind kind, std::size_t size, std::uint64_t seed,
                                  int domain_id = 0);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Reads a UTF-8 text file; paragraphs are separated by blank lines. The
/// paragraphs are shuffled with `seed` and split by `fractions`.
DomainCorpus load_text_domain(const std::filesystem::path& path, int domain_id,
                              std::string name, SplitFractions fractions, std::uint64_t seed);

/// One entry of a corpus manifest: either a file on disk or a synthetic kind.
struct DomainSpec {
  std::string name;
  std::optional<std::filesystem::path> path;
  std::optional<SyntheticKind> kind;
  std::size_t size = 0;  // synthetic paragraphs
  SplitFractions fractions;
};

/// Manifest JSON: {"domains": [{"name", "path" | "kind", "size", "split": [tr, va, te]}]}.
/// Relative paths resolve against the manifest's directory.
std::vector<DomainSpec> load_manifest(const std::filesystem::path& path);
std::vector<DomainSpec> parse_manifest(std::string_view json_text,
                                       const std::filesystem::path& base_dir);

/// Materializes corpora; domain ids follow the order of `specs`.
std::vector<DomainCorpus> build_corpora(const std::vector<DomainSpec>& specs, std::uint64_t seed);

/// Truncates/pads each sequence of the split to `seq_len`. With a shuffle seed
/// the sequence order is permuted deterministically; without, corpus order.
std::vector<Batch> make_batches(const DomainCorpus& corpus, Split split, std::size_t batch_size,
                                std::size_t seq_len,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// All batches of every corpus for one epoch, interleaved in a seeded order.
std::vector<Batch> make_mixed_batches(const std::vector<DomainCorpus>& corpora, Split split,
                                      std::size_t batch_size, std::size_t seq_len,
                                      std::uint64_t shuffle_seed);

}  // namespace moeup
