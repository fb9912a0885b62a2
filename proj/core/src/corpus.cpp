// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moeup/error.hpp"

namespace moeup {

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

const std::vector<TokenSequence>& DomainCorpus::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return test;
}

std::size_t Batch::real_tokens() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TokenSequence tokenize_bytes(std::string_view text, int domain_id) {
  TokenSequence seq;
  seq.domain_id = domain_id;
  seq.tokens.reserve(text.size());
  for (char c : text) seq.tokens.push_back(static_cast<unsigned char>(c));
  return seq;
}

std::string detokenize(const TokenSequence& seq) {
  std::string out;
  out.reserve(seq.tokens.size());
  for (int t : seq.tokens) {
    if (t == kPadId) break;
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

const char* to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kArith: return "arith";
    case SyntheticKind::kBrackets: return "brackets";
    case SyntheticKind::kProse: return "prose";
    case SyntheticKind::kCaesar: return "caesar";
    case SyntheticKind::kHexcode: return "hexcode";
  }
  return "?";
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  for (SyntheticKind k : kAllSyntheticKinds)
    if (name == to_string(k)) return k;
  fail(ErrorCode::kUnknownKind, "unknown synthetic domain kind '" + std::string(name) + "'");
}

namespace {

constexpr std::array<std::string_view, 64> kWords = {
    "the",    "a",      "of",     "and",    "to",     "in",     "is",     "was",
    "that",   "for",    "on",     "with",   "as",     "by",     "at",     "from",
    "river",  "city",   "king",   "people", "water",  "light",  "house",  "time",
    "world",  "night",  "story",  "garden", "winter", "stone",  "voice",  "road",
    "old",    "quiet",  "bright", "small",  "long",   "early",  "green",  "cold",
    "walked", "found",  "spoke",  "carried", "watched", "built", "lost",  "opened",
    "slowly", "again",  "never",  "always", "together", "there", "before", "after",
    "mother", "friend", "letter", "window", "mountain", "village", "summer", "bread"};

std::string prose_paragraph(Rng& rng, std::size_t target) {
  std::string out;
  bool sentence_start = true;
  while (out.size() < target) {
    std::string word(kWords[rng.below(kWords.size())]);
    if (sentence_start) word[0] = static_cast<char>(word[0] - 'a' + 'A');
    if (!out.empty()) out.push_back(' ');
    out += word;
    sentence_start = false;
    if (rng.uniform() < 0.12) {
      out.push_back(rng.uniform() < 0.8 ? '.' : ',');
      sentence_start = out.back() == '.';
    }
  }
  if (out.back() != '.') out.push_back('.');
  return out;
}

char caesar_shift(char c, int shift) {
  if (c >= 'a' && c <= 'z') return static_cast<char>('a' + (c - 'a' + shift) % 26);
  if (c >= 'A' && c <= 'Z') return static_cast<char>('A' + (c - 'A' + shift) % 26);
  return c;
}

std::string arith_paragraph(Rng& rng, std::size_t target) {
  std::string out;
  while (out.size() < target) {
    const long a = rng.range(0, 99);
    const long b = rng.range(0, 99);
    const int op = static_cast<int>(rng.below(3));
    long r = 0;
    char sym = '+';
    switch (op) {
      case 0: r = a + b; sym = '+'; break;
      case 1: r = a - b; sym = '-'; break;
      default: r = a * b; sym = '*'; break;
    }
    out += std::to_string(a);
    out.push_back(sym);
    out += std::to_string(b);
    out.push_back('=');
    out += std::to_string(r);
    out.push_back(';');
  }
  return out;
}

std::string brackets_paragraph(Rng& rng, std::size_t target) {
  static constexpr std::array<char, 3> kOpen = {'(', '[', '{'};
  static constexpr std::array<char, 3> kClose = {')', ']', '}'};
  std::string out;
  std::vector<int> stack;
  while (out.size() + stack.size() < target) {
    const bool open = stack.empty() || (stack.size() < 8 && rng.uniform() < 0.55);
    if (open) {
      const int kind = static_cast<int>(rng.below(3));
      stack.push_back(kind);
      out.push_back(kOpen[kind]);
    } else {
      out.push_back(kClose[stack.back()]);
      stack.pop_back();
    }
  }
  while (!stack.empty()) {
    out.push_back(kClose[stack.back()]);
    stack.pop_back();
  }
  return out;
}

std::string hexcode_paragraph(Rng& rng, std::size_t target) {
  static constexpr std::string_view kHex = "0123456789abcdef";
  std::string out;
  while (out.size() < target) {
    const auto byte = rng.below(256);
    out += "0x";
    out.push_back(kHex[byte >> 4]);
    out.push_back(kHex[byte & 15]);
    out += ", ";
  }
  return out;
}

DomainCorpus split_paragraphs(std::vector<TokenSequence> seqs, int domain_id, std::string name,
                              SplitFractions f) {
  require(f.train >= 0 && f.val >= 0 && f.test >= 0 && f.train + f.val + f.test > 0,
          ErrorCode::kInvalidArgument, "split fractions must be non-negative");
  const double total = f.train + f.val + f.test;
  const std::size_t n = seqs.size();
  const auto n_train = static_cast<std::size_t>(std::llround(n * f.train / total));
  auto n_val = static_cast<std::size_t>(std::llround(n * f.val / total));
  n_val = std::min(n_val, n - std::min(n, n_train));
  DomainCorpus corpus;
  corpus.domain_id = domain_id;
  corpus.name = std::move(name);
  for (std::size_t i = 0; i < n; ++i) {
    seqs[i].domain_id = domain_id;
    if (i < n_train) {
      corpus.train.push_back(std::move(seqs[i]));
    } else if (i < n_train + n_val) {
      corpus.val.push_back(std::move(seqs[i]));
    } else {
      corpus.test.push_back(std::move(seqs[i]));
    }
  }
  return corpus;
}

}  // namespace

std::string synthetic_paragraph(SyntheticKind kind, Rng& rng) {
  const auto target = static_cast<std::size_t>(rng.range(60, 160));
  switch (kind) {
    case SyntheticKind::kArith: return arith_paragraph(rng, target);
    case SyntheticKind::kBrackets: return brackets_paragraph(rng, target);
    case SyntheticKind::kProse: return prose_paragraph(rng, target);
    case SyntheticKind::kCaesar: {
      std::string text = prose_paragraph(rng, target);
      for (char& c : text) c = caesar_shift(c, 3);
      return text;
    }
    case SyntheticKind::kHexcode: return hexcode_paragraph(rng, target);
  }
  fail(ErrorCode::kUnknownKind, "unknown synthetic domain kind");
}

DomainCorpus gen_synthetic_domain(SyntheticKind kind, std::size_t size, std::uint64_t seed,
                                  int domain_id) {
  require(size > 0, ErrorCode::kInvalidArgument, "synthetic domain size must be > 0");
  Rng rng(hash_combine(seed, static_cast<std::uint64_t>(kind) + 1));
  std::vector<TokenSequence> seqs;
  seqs.reserve(size);
  for (std::size_t i = 0; i < size; ++i)
    seqs.push_back(tokenize_bytes(synthetic_paragraph(kind, rng), domain_id));
  return split_paragraphs(std::move(seqs), domain_id, to_string(kind), SplitFractions{});
}

DomainCorpus load_text_domain(const std::filesystem::path& path, int domain_id,
                              std::string name, SplitFractions fractions, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingArtifact, "cannot open corpus file " + path.string());
  std::vector<TokenSequence> seqs;
  std::string line;
  std::string para;
  auto flush = [&] {
    if (!para.empty()) seqs.push_back(tokenize_bytes(para, domain_id));
    para.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank) {
      flush();
    } else {
      if (!para.empty()) para.push_back('\n');
      para += line;
    }
  }
  flush();
  require(!seqs.empty(), ErrorCode::kEmptySplit, "corpus file has no paragraphs: " + path.string());
  Rng rng(hash_combine(seed, static_cast<std::uint64_t>(domain_id) + 101));
  rng.shuffle(seqs.begin(), seqs.end());
  return split_paragraphs(std::move(seqs), domain_id, std::move(name), fractions);
}

std::vector<DomainSpec> parse_manifest(std::string_view json_text,
                                       const std::filesystem::path& base_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfigError, std::string("manifest is not valid JSON: ") + e.what());
  }
  const nlohmann::json& list = doc.is_array() ? doc : doc.value("domains", nlohmann::json());
  require(list.is_array() && !list.empty(), ErrorCode::kConfigError,
          "manifest must list at least one domain");
  std::vector<DomainSpec> specs;
  for (const auto& entry : list) {
    DomainSpec spec;
    try {
      if (entry.contains("kind")) {
        spec.kind = parse_synthetic_kind(entry.at("kind").get<std::string>());
        spec.size = entry.value("size", std::size_t{1000});
        spec.name = entry.value("name", std::string(to_string(*spec.kind)));
      } else {
        std::filesystem::path p = entry.at("path").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        spec.path = p;
        spec.name = entry.value("name", p.stem().string());
      }
      if (entry.contains("split")) {
        const auto& s = entry.at("split");
        require(s.is_array() && s.size() == 3, ErrorCode::kConfigError,
                "split must be [train, val, test]");
        spec.fractions = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kConfigError, std::string("bad manifest entry: ") + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kUnknownKind) fail(ErrorCode::kConfigError, e.what());
      throw;
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<DomainSpec> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingArtifact, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::vector<DomainCorpus> build_corpora(const std::vector<DomainSpec>& specs, std::uint64_t seed) {
  std::vector<DomainCorpus> out;
  out.reserve(specs.size());
  for (std::size_t d = 0; d < specs.size(); ++d) {
    const auto& spec = specs[d];
    const int id = static_cast<int>(d);
    if (spec.kind) {
      DomainCorpus c = gen_synthetic_domain(*spec.kind, spec.size, hash_combine(seed, d), id);
      c.name = spec.name;
      out.push_back(std::move(c));
    } else {
      require(spec.path.has_value(), ErrorCode::kConfigError, "domain has neither kind nor path");
      out.push_back(load_text_domain(*spec.path, id, spec.name, spec.fractions, seed));
    }
  }
  return out;
}

std::vector<Batch> make_batches(const DomainCorpus& corpus, Split split, std::size_t batch_size,
                                std::size_t seq_len, std::optional<std::uint64_t> shuffle_seed) {
  require(batch_size > 0 && seq_len > 0, ErrorCode::kInvalidArgument,
          "batch_size and seq_len must be > 0");
  const auto& seqs = corpus.split(split);
  require(!seqs.empty(), ErrorCode::kEmptySplit,
          "domain '" + corpus.name + "' has an empty " + to_string(split) + " split");
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    Batch batch;
    batch.batch_size = b;
    batch.seq_len = seq_len;
    batch.domain_id = corpus.domain_id;
    batch.tokens.assign(b * seq_len, kPadId);
    batch.mask.assign(b * seq_len, 0);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& toks = seqs[order[start + i]].tokens;
      const std::size_t n = std::min(seq_len, toks.size());
      for (std::size_t t = 0; t < n; ++t) {
        batch.tokens[i * seq_len + t] = toks[t];
        batch.mask[i * seq_len + t] = 1;
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<Batch> make_mixed_batches(const std::vector<DomainCorpus>& corpora, Split split,
                                      std::size_t batch_size, std::size_t seq_len,
                                      std::uint64_t shuffle_seed) {
  std::vector<Batch> all;
  for (std::size_t d = 0; d < corpora.size(); ++d) {
    auto part = make_batches(corpora[d], split, batch_size, seq_len, hash_combine(shuffle_seed, d));
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  Rng rng(hash_combine(shuffle_seed, 0xba7c4));
  rng.shuffle(all.begin(), all.end());
  return all;
}

}  // namespace moeup
