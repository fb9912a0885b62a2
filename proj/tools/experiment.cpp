// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "moeup/error.hpp"
#include "moeup/json.hpp"

namespace moeup::cli {

using nlohmann::json;

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) h = (h ^ c) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kConfigError,
          "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    require(!part.empty(), ErrorCode::kConfigError, "override key '" + key + "' is malformed");
    require(node->is_object() || node->is_null(), ErrorCode::kConfigError,
            "override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

namespace {

TrainConfig train_config(const json& j, TrainConfig c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.seed = j.value("seed", c.seed);
  c.min_lr_fraction = j.value("min_lr_fraction", c.min_lr_fraction);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validate();
  return c;
}

TrainConfig make_train(double lr, long warmup, long total, std::uint64_t seed, Trainable t) {
  TrainConfig c;
  c.learning_rate = lr;
  c.warmup_steps = warmup;
  c.total_steps = total;
  c.seed = seed;
  c.trainable = t;
  return c;
}

std::vector<DomainSpec> domain_list(const json& doc, const char* key, const std::filesystem::path& base) {
  if (!doc.contains(key) || doc[key].empty()) return {};
  const json& v = doc[key];
  if (v.is_string()) {
    std::filesystem::path p = v.get<std::string>();
    if (p.is_relative()) p = base / p;
    require(std::filesystem::exists(p), ErrorCode::kConfigError,
            "manifest " + p.string() + " does not exist");
    return load_manifest(p);
  }
  return parse_manifest(v.dump(), base);
}

}  // namespace

ExperimentConfig parse_experiment(const json& doc, const std::filesystem::path& base_dir) {
  require(doc.is_object(), ErrorCode::kConfigError, "experiment config must be a JSON object");
  ExperimentConfig c;
  c.canonical = doc;
  try {
    if (doc.contains("model")) c.model = doc["model"].get<ModelConfig>();
    c.model.validate();

    const json corpus = doc.value("corpus", json::object());
    c.corpus_seed = corpus.value("seed", c.corpus_seed);
    c.domains = domain_list(corpus, "domains", base_dir);
    c.extra_domains = domain_list(corpus, "extra_domains", base_dir);
    require(!c.domains.empty(), ErrorCode::kConfigError, "corpus.domains is empty");
    for (const auto* list : {&c.domains, &c.extra_domains})
      for (const auto& d : *list)
        require(!d.path || std::filesystem::exists(*d.path), ErrorCode::kConfigError,
                "domain file " + (d.path ? d.path->string() : "") + " does not exist");

    c.pretrain = train_config(doc.value("pretrain", json::object()),
                              make_train(1e-3, 100, 2000, 11, Trainable::kAll));
    c.expert = train_config(doc.value("expert", json::object()),
                            make_train(1.1e-3, 50, 500, 100, Trainable::kAll));
    c.rome_plus = train_config(doc.value("rome_plus", json::object()),
                               make_train(1e-5, 30, 300, 200, Trainable::kRoutersOnly));
    c.btx = train_config(doc.value("btx", json::object()),
                         make_train(1e-4, 30, 300, 300, Trainable::kRoutersOnly));

    const json router = doc.value("router", json::object());
    c.lambda = router.value("lambda", c.lambda);
    c.top_k = router.value("top_k", c.top_k);
    c.btx_top_k = router.value("btx_top_k", c.btx_top_k);
    c.normalize = router.value("normalize", c.normalize);
    if (router.contains("max_tokens") && !router["max_tokens"].is_null()) {
      const long m = router["max_tokens"].get<long>();
      require(m >= 0, ErrorCode::kConfigError, "router.max_tokens must be >= 0");
      if (m > 0) c.max_tokens = static_cast<std::size_t>(m);
    }
    c.stats_batch_size = router.value("batch_size", c.stats_batch_size);
    c.stats_seq_len = router.value("seq_len", c.stats_seq_len);

    const json eval = doc.value("eval", json::object());
    c.eval.batch_size = eval.value("batch_size", c.eval.batch_size);
    c.eval.seq_len = eval.value("seq_len", c.eval.seq_len);
    c.seeds = doc.value("seeds", c.seeds);

    std::filesystem::path out = doc.value("output_dir", c.output_dir.string());
    c.output_dir = out.is_relative() ? base_dir / out : out;
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigError, std::string("bad experiment config: ") + e.what());
  }

  const int d = static_cast<int>(c.domains.size());
  require(c.lambda > 0.0, ErrorCode::kConfigError, "router.lambda must be > 0");
  require(c.top_k >= 1 && c.top_k <= d, ErrorCode::kConfigError,
          "router.top_k must be in [1, " + std::to_string(d) + "]");
  require(c.btx_top_k >= 1 && c.btx_top_k <= d, ErrorCode::kConfigError,
          "router.btx_top_k must be in [1, " + std::to_string(d) + "]");
  require(!c.seeds.empty(), ErrorCode::kConfigError, "seeds must not be empty");
  require(c.eval.batch_size > 0 && c.eval.seq_len > 0 && c.stats_batch_size > 0 &&
              c.stats_seq_len > 0,
          ErrorCode::kConfigError, "batch sizes and sequence lengths must be > 0");
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kMissingArtifact, "config " + path.string() + " not found");
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_experiment(doc, path.parent_path());
}

std::string ExperimentConfig::lineage_hash() const {
  json lineage;
  lineage["model"] = model;
  lineage["corpus"] = canonical.value("corpus", json::object());
  lineage["pretrain"] = canonical.value("pretrain", json::object());
  lineage["expert"] = canonical.value("expert", json::object());
  return fnv1a_hex(lineage.dump());
}

RidgeFitOptions ExperimentConfig::ridge_options() const {
  RidgeFitOptions o;
  o.lambda = lambda;
  o.max_tokens = max_tokens;
  o.normalize = normalize;
  o.batch_size = stats_batch_size;
  o.seq_len = stats_seq_len;
  return o;
}

LadderOptions ExperimentConfig::ladder_options() const {
  LadderOptions o;
  o.seeds = seeds;
  o.eval = eval;
  o.ridge = ridge_options();
  o.rome_top_k = top_k;
  o.btx_top_k = btx_top_k;
  o.btx = btx;
  o.rome_plus = rome_plus;
  return o;
}

}  // namespace moeup::cli
