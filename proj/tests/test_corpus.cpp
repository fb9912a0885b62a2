// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "moeup/corpus.hpp"
#include "moeup/error.hpp"

namespace moeup {
namespace {

TEST(Tokenize, EmptyText) { EXPECT_EQ(tokenize_bytes("").length(), 0u); }

TEST(Tokenize, AsciiIdentity) { EXPECT_EQ(tokenize_bytes("ab").tokens, (std::vector<int>{97, 98})); }

TEST(Tokenize, RoundTripRandomBytes) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::string s(rng.below(40), '\0');
    for (auto& c : s) c = static_cast<char>(rng.below(256));
    EXPECT_EQ(detokenize(tokenize_bytes(s)), s);
  }
}

TEST(Synthetic, Deterministic) {
  const auto a = gen_synthetic_domain(SyntheticKind::kArith, 10, 42);
  const auto b = gen_synthetic_domain(SyntheticKind::kArith, 10, 42);
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    ASSERT_EQ(a.split(s).size(), b.split(s).size());
    for (std::size_t i = 0; i < a.split(s).size(); ++i)
      EXPECT_EQ(a.split(s)[i].tokens, b.split(s)[i].tokens);
  }
}

TEST(Synthetic, BracketsBalanced) {
  const auto c = gen_synthetic_domain(SyntheticKind::kBrackets, 100, 7);
  const std::map<char, char> close{{')', '('}, {']', '['}, {'}', '{'}};
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& seq : c.split(s)) {
      std::string stack;
      for (char ch : detokenize(seq)) {
        if (ch == '(' || ch == '[' || ch == '{') {
          stack.push_back(ch);
        } else if (close.count(ch)) {
          ASSERT_FALSE(stack.empty());
          ASSERT_EQ(stack.back(), close.at(ch));
          stack.pop_back();
        }
      }
      EXPECT_TRUE(stack.empty());
    }
  }
}

std::vector<double> unigram(const DomainCorpus& c) {
  std::vector<double> h(256, 0.0);
  double n = 0;
  for (const auto& seq : c.train)
    for (int t : seq.tokens) {
      h[t] += 1;
      n += 1;
    }
  for (auto& v : h) v /= n;
  return h;
}

TEST(Synthetic, ArithAndHexcodeDiffer) {
  const auto a = unigram(gen_synthetic_domain(SyntheticKind::kArith, 200, 3));
  const auto b = unigram(gen_synthetic_domain(SyntheticKind::kHexcode, 200, 3));
  double tv = 0.0;
  for (int i = 0; i < 256; ++i) tv += std::abs(a[i] - b[i]);
  EXPECT_GT(0.5 * tv, 0.5);
}

TEST(Synthetic, SplitsAreDisjointAndLabelled) {
  const auto c = gen_synthetic_domain(SyntheticKind::kProse, 50, 4, 3);
  EXPECT_EQ(c.train.size() + c.val.size() + c.test.size(), 50u);
  EXPECT_EQ(c.train.size(), 40u);
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest})
    for (const auto& seq : c.split(s)) EXPECT_EQ(seq.domain_id, 3);
}

TEST(Synthetic, UnknownKind) {
  try {
    parse_synthetic_kind("latin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownKind);
  }
}

DomainCorpus corpus_of(std::vector<std::vector<int>> seqs) {
  DomainCorpus c;
  c.domain_id = 1;
  for (auto& s : seqs) c.train.push_back({std::move(s), 1});
  return c;
}

TEST(Batching, PadMask) {
  const auto batches = make_batches(corpus_of({{1, 2, 3}}), Split::kTrain, 4, 5);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  EXPECT_EQ(batches[0].tokens, (std::vector<int>{1, 2, 3, kPadId, kPadId}));
  EXPECT_EQ(batches[0].domain_id, 1);
}

TEST(Batching, LastBatchIsShort) {
  std::vector<std::vector<int>> seqs(10, std::vector<int>{7, 8});
  const auto batches = make_batches(corpus_of(seqs), Split::kTrain, 4, 3);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].batch_size, 4u);
  EXPECT_EQ(batches[1].batch_size, 4u);
  EXPECT_EQ(batches[2].batch_size, 2u);
}

TEST(Batching, TokenMultisetPreserved) {
  const auto c = gen_synthetic_domain(SyntheticKind::kArith, 60, 9);
  const std::size_t seq_len = 48;
  std::map<int, long> want, got;
  for (const auto& s : c.train)
    for (std::size_t i = 0; i < std::min(s.length(), seq_len); ++i) ++want[s.tokens[i]];
  for (const auto& b : make_batches(c, Split::kTrain, 7, seq_len, 123)) {
    for (std::size_t i = 0; i < b.tokens.size(); ++i) {
      if (b.mask[i]) ++got[b.tokens[i]];
      else EXPECT_EQ(b.tokens[i], kPadId);
    }
  }
  EXPECT_EQ(want, got);
}

TEST(Batching, ShuffleIsReproducible) {
  const auto c = gen_synthetic_domain(SyntheticKind::kProse, 80, 2);
  const auto a = make_batches(c, Split::kTrain, 8, 32, 5);
  const auto b = make_batches(c, Split::kTrain, 8, 32, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
}

TEST(Batching, EmptySplitThrows) {
  try {
    make_batches(corpus_of({}), Split::kTest, 2, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySplit);
  }
}

TEST(Manifest, MixedEntries) {
  const auto dir = std::filesystem::temp_directory_path() / "moeup_manifest_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "notes.txt");
    for (int i = 0; i < 20; ++i) f << "paragraph " << i << " line\nsecond line\n\n";
  }
  const auto specs = parse_manifest(
      R"({"domains": [{"name": "n", "path": "notes.txt", "split": [0.5, 0.25, 0.25]},
                       {"kind": "hexcode", "size": 30}]})",
      dir);
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[1].name, "hexcode");
  const auto corpora = build_corpora(specs, 1);
  EXPECT_EQ(corpora[0].train.size(), 10u);
  EXPECT_EQ(corpora[0].test.size(), 5u);
  EXPECT_EQ(corpora[1].domain_id, 1);
  for (const auto& s : corpora[1].train) EXPECT_EQ(s.domain_id, 1);
}

TEST(Manifest, BadKindIsConfigError) {
  try {
    parse_manifest(R"([{"kind": "latin"}])", ".");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
}

}  // namespace
}  // namespace moeup
