// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "experiment.hpp"
#include "moeup/counters.hpp"
#include "moeup/eval_harness.hpp"
#include "moeup/moe.hpp"
#include "moeup/ridge_router.hpp"
#include "moeup/trainer.hpp"

namespace moeup::cli {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kUnknownKind:
    case ErrorCode::kHashMismatch:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kEmptySplit:
      return kExitConfig;
    case ErrorCode::kMissingArtifact:
    case ErrorCode::kMagicMismatch:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kTruncatedFile:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kIoError:
      return kExitMissingArtifact;
    case ErrorCode::kNotPositiveDefinite:
    case ErrorCode::kNonFinite:
    case ErrorCode::kDimensionMismatch:
      return kExitNumerical;
    case ErrorCode::kDivergence:
      return kExitDivergence;
  }
  return kExitFailure;
}

unsigned thread_count() {
  const char* v = std::getenv("MOEUP_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  require(end != v && *end == '\0' && n >= 1, ErrorCode::kConfigError,
          "MOEUP_THREADS must be a positive integer");
  return static_cast<unsigned>(n);
}

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string output_dir;
  bool force = false;
  std::optional<double> lambda;
  std::optional<long> max_tokens;
  bool no_normalize = false;
  std::optional<int> top_k;

  std::string domain;          // branch, add-domain
  std::string init = "ridge";  // merge: uninitialized|random; finetune: ridge|random
  std::optional<std::uint64_t> router_seed;
  std::string stats_corpora;   // fit-routers
  std::string moe_path;        // eval
  std::string policy = "learned";
  std::string axis;            // sweep
  std::vector<double> values;
  std::string expert_path;     // add-domain
  bool pin_trunk = false;
};

class Command {
 public:
  Command(const Options& o, std::ostream& out, std::ostream& err)
      : opt_(o), out_(out), err_(err), cfg_(load()) {}

  int pretrain();
  int branch();
  int merge();
  int fit_routers();
  int finetune_routers();
  int eval();
  int ladder();
  int sweep();
  int add_domain();

 private:
  ExperimentConfig load() const {
    auto sets = opt_.sets;
    if (!opt_.output_dir.empty()) sets.push_back("output_dir=\"" + opt_.output_dir + "\"");
    if (opt_.lambda) sets.push_back("router.lambda=" + std::to_string(*opt_.lambda));
    if (opt_.max_tokens) sets.push_back("router.max_tokens=" + std::to_string(*opt_.max_tokens));
    if (opt_.no_normalize) sets.push_back("router.normalize=false");
    if (opt_.top_k) sets.push_back("router.top_k=" + std::to_string(*opt_.top_k));
    return load_experiment(opt_.config, sets);
  }

  std::vector<DomainCorpus> corpora() const { return build_corpora(cfg_.domains, cfg_.corpus_seed); }

  void check_hash(const std::string& found, const std::filesystem::path& path) const {
    if (opt_.force || found.empty() || found == cfg_.lineage_hash()) return;
    fail(ErrorCode::kHashMismatch, path.string() + " was produced by config " + found +
                                       ", current config is " + cfg_.lineage_hash() +
                                       " (use --force to override)");
  }

  ModelParams load_dense(const std::filesystem::path& path) const {
    auto ck = load_checkpoint(path, cfg_.model);
    check_hash(ck.config_hash, path);
    return std::move(ck.params);
  }

  MoEModel load_merged(const std::filesystem::path& path) const {
    auto m = load_moe(path);
    check_hash(m.config_hash, path);
    require(m.moe.config == cfg_.model, ErrorCode::kShapeMismatch,
            path.string() + " does not match the model config");
    return std::move(m.moe);
  }

  std::vector<ModelParams> load_experts() const {
    std::vector<ModelParams> out;
    for (const auto& d : cfg_.domains) out.push_back(load_dense(cfg_.expert_path(d.name)));
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& d : cfg_.domains) out.push_back(d.name);
    return out;
  }

  void write_file(const std::filesystem::path& path, const std::string& text) const {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorCode::kIoError, "cannot write " + path.string());
    f << text;
  }

  void write_history(const std::filesystem::path& path, const std::vector<LossPoint>& h) const {
    std::ostringstream ss;
    write_loss_csv(ss, h);
    write_file(path, ss.str());
  }

  ProgressFn progress(const std::string& tag) const {
    return [this, tag](const LossPoint& p) {
      if (p.step % 100 == 0) {
        std::lock_guard lock(log_mutex_);
        err_ << tag << " step " << p.step << " loss " << p.loss << '\n';
      }
    };
  }

  void report_cost(const CostSnapshot& c) const {
    out_ << "forward_passes\t" << c.forward_passes << "\nbackward_passes\t" << c.backward_passes
         << "\nrouter_reads\t" << c.router_reads << '\n';
  }

  const Options& opt_;
  std::ostream& out_;
  std::ostream& err_;
  ExperimentConfig cfg_;
  mutable std::mutex log_mutex_;
};

int Command::pretrain() {
  const auto cs = corpora();
  auto result = train(init_params(cfg_.model, cfg_.pretrain.seed), cfg_.model, cs, cfg_.pretrain,
                      progress("pretrain"));
  save_checkpoint(result.params, cfg_.model, cfg_.seed_path(), cfg_.lineage_hash());
  write_history(cfg_.output_dir / "seed_loss.csv", result.history);
  out_ << "seed\t" << cfg_.seed_path().string() << "\nfinal_loss\t"
       << (result.history.empty() ? 0.0 : result.history.back().loss) << '\n';
  return kExitOk;
}

int Command::branch() {
  const ModelParams seed = load_dense(cfg_.seed_path());
  std::vector<DomainSpec> all = cfg_.domains;
  all.insert(all.end(), cfg_.extra_domains.begin(), cfg_.extra_domains.end());
  const auto cs = build_corpora(all, cfg_.corpus_seed);
  std::vector<std::size_t> todo;
  for (std::size_t d = 0; d < all.size(); ++d) {
    if (opt_.domain.empty() ? d < cfg_.domains.size() : all[d].name == opt_.domain) todo.push_back(d);
  }
  require(!todo.empty(), ErrorCode::kConfigError, "unknown domain '" + opt_.domain + "'");

  // Experts are independent; run up to MOEUP_THREADS of them at once.
  std::vector<std::string> finals(all.size());
  std::vector<std::exception_ptr> errors(todo.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < todo.size();) {
      try {
        const std::size_t d = todo[i];
        TrainConfig tc = cfg_.expert;
        tc.seed += d;
        const std::vector<DomainCorpus> one{cs[d]};
        auto r = train(seed, cfg_.model, one, tc, progress("branch[" + all[d].name + "]"));
        save_checkpoint(r.params, cfg_.model, cfg_.expert_path(all[d].name), cfg_.lineage_hash());
        write_history(cfg_.output_dir / "experts" / (all[d].name + "_loss.csv"), r.history);
        finals[d] = std::to_string(r.history.empty() ? 0.0 : r.history.back().loss);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::min<std::size_t>(thread_count(), todo.size());
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t d : todo)
    out_ << all[d].name << '\t' << cfg_.expert_path(all[d].name).string() << '\t' << finals[d] << '\n';
  return kExitOk;
}

int Command::merge() {
  const auto experts = load_experts();
  RouterInit init = UninitializedRouters{};
  if (opt_.init == "random") {
    init = RandomRouters{opt_.router_seed.value_or(cfg_.btx.seed)};
  } else {
    require(opt_.init == "uninitialized" || opt_.init == "ridge", ErrorCode::kConfigError,
            "merge --init must be uninitialized or random");
  }
  const MoEModel moe = assemble_moe(experts, cfg_.model, init, cfg_.top_k, names());
  save_moe(moe, cfg_.merged_path(), cfg_.lineage_hash());
  const auto counts = count_active_params(moe, cfg_.top_k);
  out_ << "moe\t" << cfg_.merged_path().string() << "\nexperts\t" << moe.num_experts()
       << "\ntotal_params\t" << counts.total << "\nactive_params\t" << counts.active_per_token
       << "\nrouter_params\t" << counts.router << '\n';
  return kExitOk;
}

int Command::fit_routers() {
  MoEModel moe = load_merged(cfg_.merged_path());
  moe.top_k = cfg_.top_k;
  std::vector<DomainCorpus> stats_corpora;
  if (opt_.stats_corpora.empty()) {
    stats_corpora = corpora();
  } else {
    require(std::filesystem::exists(opt_.stats_corpora), ErrorCode::kConfigError,
            "stats corpora manifest " + opt_.stats_corpora + " does not exist");
    stats_corpora = build_corpora(load_manifest(opt_.stats_corpora), cfg_.corpus_seed);
  }
  const auto before = cost_snapshot();
  auto fit = fit_routers_pipeline(std::move(moe), stats_corpora, cfg_.ridge_options());
  const auto cost = cost_snapshot() - before;
  save_moe(fit.moe, cfg_.rome_path(), cfg_.lineage_hash());
  save_stats(fit.stats, cfg_.stats_path(), cfg_.lineage_hash());
  out_ << "moe\t" << cfg_.rome_path().string() << "\nstats\t" << cfg_.stats_path().string()
       << "\nlambda\t" << cfg_.lambda << "\nstatistics_batches\t" << fit.batches << '\n';
  report_cost(cost);
  return kExitOk;
}

int Command::finetune_routers() {
  MoEModel moe;
  TrainConfig tc;
  std::string tag;
  if (opt_.init == "ridge") {
    moe = load_merged(cfg_.rome_path());
    moe.top_k = cfg_.top_k;
    tc = cfg_.rome_plus;
    tag = "rome_plus";
  } else {
    require(opt_.init == "random", ErrorCode::kConfigError, "finetune-routers --init must be ridge or random");
    moe = load_merged(cfg_.merged_path());
    const std::uint64_t seed = opt_.router_seed.value_or(cfg_.btx.seed);
    install_routers(moe, random_routers(cfg_.model, moe.num_experts(), seed));
    moe.top_k = cfg_.btx_top_k;
    tc = cfg_.btx;
    tc.seed = seed;
    tag = "btx";
  }
  if (opt_.router_seed) tc.seed = *opt_.router_seed;
  const auto before = cost_snapshot();
  auto r = moeup::finetune_routers(std::move(moe), corpora(), tc, progress(tag));
  const auto cost = cost_snapshot() - before;
  const auto path = cfg_.output_dir / ("moe_" + tag + ".ckpt");
  save_moe(r.moe, path, cfg_.lineage_hash());
  write_history(cfg_.output_dir / (tag + "_loss.csv"), r.history);
  out_ << "moe\t" << path.string() << '\n';
  report_cost(cost);
  return kExitOk;
}

RoutingPolicy parse_policy(const std::string& name, std::uint64_t seed) {
  if (name == "learned") return RoutingPolicy::learned();
  if (name == "oracle") return RoutingPolicy::oracle();
  if (name == "random") return RoutingPolicy::random(seed);
  if (name == "deterministic_domain") return RoutingPolicy::deterministic_domain();
  fail(ErrorCode::kConfigError, "unknown policy '" + name + "'");
}

int Command::eval() {
  const std::filesystem::path moe_path = opt_.moe_path.empty() ? cfg_.rome_path() : std::filesystem::path(opt_.moe_path);
  const MoEModel moe = load_merged(moe_path);
  const auto experts = load_experts();
  auto cs = corpora();
  const auto policy = parse_policy(opt_.policy, cfg_.seeds.front());

  EvalReport report;
  report.domain_names = names();
  report.seeds = {cfg_.seeds.front()};
  for (std::size_t e = 0; e < experts.size(); ++e) {
    std::vector<double> row;
    for (const auto& c : cs) row.push_back(eval_perplexity(experts[e], cfg_.model, c, cfg_.eval));
    report.expert_grid.push_back(std::move(row));
  }
  for (std::size_t d = 0; d < cs.size(); ++d) report.reference.push_back(report.expert_grid[d][d]);

  MethodResult r;
  r.method = "moe_" + opt_.policy;
  const auto before = cost_snapshot();
  std::vector<double> ppl;
  std::vector<std::pair<std::size_t, std::size_t>> hits(cfg_.model.n_layers, {0, 0});
  for (const auto& c : cs) {
    const auto e = eval_moe(moe, c, policy, cfg_.eval);
    ppl.push_back(e.perplexity);
    for (std::size_t l = 0; l < hits.size(); ++l) {
      hits[l].first += e.routing_hits[l].first;
      hits[l].second += e.routing_hits[l].second;
    }
  }
  const auto s = normalized_score(ppl, report.reference);
  r.perplexity = {ppl};
  r.score = {s.per_domain};
  r.average = {s.average};
  r.summary = {s.average, 0.0};
  for (const auto& [ok, total] : hits) r.routing_accuracy.push_back(total ? double(ok) / total : 0.0);
  r.cost = cost_snapshot() - before;
  report.methods.push_back(std::move(r));

  std::ostringstream tsv, js;
  report.write_tsv(tsv);
  report.write_json(js);
  write_file(cfg_.output_dir / "eval.tsv", tsv.str());
  write_file(cfg_.output_dir / "eval.json", js.str());
  out_ << tsv.str();
  return kExitOk;
}

int Command::ladder() {
  const auto experts = load_experts();
  const auto report = run_ladder(cfg_.model, experts, corpora(), cfg_.ladder_options());
  std::ostringstream tsv, js;
  report.write_tsv(tsv);
  report.write_json(js);
  write_file(cfg_.output_dir / "ladder.tsv", tsv.str());
  write_file(cfg_.output_dir / "ladder.json", js.str());
  out_ << tsv.str();
  return kExitOk;
}

int Command::sweep() {
  const SweepAxis axis = parse_sweep_axis(opt_.axis);
  require(!opt_.values.empty(), ErrorCode::kConfigError, "sweep needs --values");
  const auto experts = load_experts();
  const auto result =
      run_sweep(cfg_.model, experts, corpora(), axis, opt_.values, cfg_.ladder_options());
  std::ostringstream csv;
  result.write_csv(csv);
  write_file(cfg_.output_dir / (std::string("sweep_") + to_string(axis) + ".csv"), csv.str());
  out_ << csv.str();
  return kExitOk;
}

int Command::add_domain() {
  require(!opt_.domain.empty(), ErrorCode::kConfigError, "add-domain needs --domain");
  std::vector<DomainSpec> all = cfg_.domains;
  all.insert(all.end(), cfg_.extra_domains.begin(), cfg_.extra_domains.end());
  std::size_t index = all.size();
  for (std::size_t d = cfg_.domains.size(); d < all.size(); ++d)
    if (all[d].name == opt_.domain) index = d;
  require(index < all.size(), ErrorCode::kConfigError,
          "'" + opt_.domain + "' is not listed in corpus.extra_domains");

  const MoEModel moe = load_merged(cfg_.rome_path());
  auto stats = load_stats(cfg_.stats_path());
  check_hash(stats.config_hash, cfg_.stats_path());
  const std::filesystem::path expert_path =
      opt_.expert_path.empty() ? cfg_.expert_path(opt_.domain) : std::filesystem::path(opt_.expert_path);
  const ModelParams expert = load_dense(expert_path);
  const auto cs = build_corpora(all, cfg_.corpus_seed);

  AddDomainOptions o;
  o.fit = cfg_.ridge_options();
  o.pin_trunk = opt_.pin_trunk;
  const auto before = cost_snapshot();
  const auto r = moeup::add_domain(stats.stats, moe, expert, cs[index], o);
  const auto cost = cost_snapshot() - before;
  const auto moe_out = cfg_.output_dir / "moe_added.ckpt";
  const auto stats_out = cfg_.output_dir / "ridge_added.stats";
  save_moe(r.moe, moe_out, cfg_.lineage_hash());
  save_stats(r.stats, stats_out, cfg_.lineage_hash());
  out_ << "moe\t" << moe_out.string() << "\nstats\t" << stats_out.string() << "\nexperts\t"
       << r.moe.num_experts() << '\n';
  report_cost(cost);
  return kExitOk;
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "Experiment config (JSON)")->required();
  app->add_option("--set", o.sets, "Override a config value, key.path=json");
  app->add_option("--output-dir", o.output_dir, "Artifact directory");
  app->add_flag("--force", o.force, "Accept artifacts produced by a different config");
}

void add_router_flags(CLI::App* app, Options& o) {
  app->add_option("--lambda", o.lambda, "Ridge penalty");
  app->add_option("--max-tokens", o.max_tokens, "Statistics tokens per sequence (0 = all)");
  app->add_flag("--no-normalize", o.no_normalize, "Keep router columns unnormalized");
  app->add_option("--top-k", o.top_k, "Experts per token");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"moeup: merge dense experts into a mixture of experts with ridge-fitted routers"};
  app.require_subcommand(1);
  Options o;

  auto* pretrain = app.add_subcommand("pretrain", "Train the seed model on all domains");
  auto* branch = app.add_subcommand("branch", "Train one expert per domain from the seed");
  branch->add_option("--domain", o.domain, "Train only this domain (may be an extra domain)");
  auto* merge = app.add_subcommand("merge", "Average the trunks and bank the expert MLPs");
  merge->add_option("--init", o.init, "Router init: uninitialized|random");
  merge->add_option("--router-seed", o.router_seed, "Seed for random routers");
  auto* fit = app.add_subcommand("fit-routers", "Closed-form ridge routers");
  fit->add_option("--stats-corpora", o.stats_corpora, "Manifest of statistics corpora");
  auto* finetune = app.add_subcommand("finetune-routers", "Router-only training");
  finetune->add_option("--init", o.init, "Start from: ridge|random");
  finetune->add_option("--router-seed", o.router_seed, "Seed for the run");
  auto* eval = app.add_subcommand("eval", "Perplexity and routing accuracy of a merged model");
  eval->add_option("--moe", o.moe_path, "Merged checkpoint (default: ridge-fitted)");
  eval->add_option("--policy", o.policy, "learned|oracle|random|deterministic_domain");
  auto* ladder = app.add_subcommand("ladder", "Full baseline comparison");
  auto* sweep = app.add_subcommand("sweep", "Vary one router knob");
  sweep->add_option("--axis", o.axis, "lambda|topk|max_tokens")->required();
  sweep->add_option("--values", o.values, "Comma-separated values")->delimiter(',')->required();
  auto* add = app.add_subcommand("add-domain", "Add an expert and update the routers");
  add->add_option("--domain", o.domain, "Name from corpus.extra_domains")->required();
  add->add_option("--expert", o.expert_path, "Dense expert checkpoint");
  add->add_flag("--pin-trunk", o.pin_trunk, "Keep the current trunk");

  for (auto* sub : {pretrain, branch, merge, fit, finetune, eval, ladder, sweep, add}) {
    add_common(sub, o);
    add_router_flags(sub, o);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    Command cmd(o, out, err);
    if (pretrain->parsed()) return cmd.pretrain();
    if (branch->parsed()) return cmd.branch();
    if (merge->parsed()) return cmd.merge();
    if (fit->parsed()) return cmd.fit_routers();
    if (finetune->parsed()) return cmd.finetune_routers();
    if (eval->parsed()) return cmd.eval();
    if (ladder->parsed()) return cmd.ladder();
    if (sweep->parsed()) return cmd.sweep();
    if (add->parsed()) return cmd.add_domain();
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace moeup::cli
