#pragma once

// Command-line front end: prepare / train / evaluate / oracle-check / sweep.
// Options may come from a TOML config file (--config) and are overridden by
// flags given on the command line.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ultragcn/dataset.hpp"
#include "ultragcn/errors.hpp"
#include "ultragcn/evaluation.hpp"
#include "ultragcn/graph.hpp"
#include "ultragcn/model.hpp"
#include "ultragcn/mp_oracle.hpp"
#include "ultragcn/training.hpp"

namespace ultragcn::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

struct RunConfig {
  std::string data_train;
  std::string data_valid;
  std::string data_test;
  std::string format = "adjacency";
  double holdout = 0.05;
  TrainConfig train;
  std::string out_dir = "ultragcn-out";
  std::string checkpoint;  // defaults to <out>/model.ckpt
  std::vector<std::size_t> cutoffs{20};
  std::string cache_dir;   // also ULTRAGCN_CACHE_DIR

  std::vector<std::string> oracle_graphs;
  std::size_t oracle_random = 20;
  std::uint64_t oracle_seed = 7;

  std::vector<double> sweep_lambdas;
  std::vector<double> sweep_gammas;
  std::vector<std::size_t> sweep_neighbors;

  std::filesystem::path out() const { return out_dir; }
  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? out() / "model.ckpt" : std::filesystem::path(checkpoint);
  }

  void require_data(bool need_test) const {
    if (data_train.empty()) throw ConfigError("--data-train is required");
    if (need_test && data_test.empty()) throw ConfigError("--data-test is required");
    for (const auto& p : {data_train, data_valid, data_test}) {
      if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError("no such file: " + p);
    }
    parse_input_format(format);
  }
};

inline InteractionDataset load_dataset(const RunConfig& cfg, std::ostream& err) {
  cfg.require_data(true);
  InputFormat fmt = parse_input_format(cfg.format);
  auto train = load_fragment(cfg.data_train, fmt);
  auto test = load_fragment(cfg.data_test, fmt);
  std::optional<InteractionFragment> valid;
  if (!cfg.data_valid.empty()) valid = load_fragment(cfg.data_valid, fmt);
  auto ds = assemble(train, valid, test, {.holdout_fraction = cfg.holdout, .seed = cfg.train.seed});
  if (ds.warnings.total() > 0) {
    err << "warning: dropped " << ds.warnings.test_cold_user << " test / " << ds.warnings.valid_cold_user
        << " validation pairs of users without train interactions, " << ds.warnings.test_in_train << " test / "
        << ds.warnings.valid_in_train << " validation pairs already in train\n";
  }
  return ds;
}

inline std::filesystem::path cache_dir(const RunConfig& cfg) {
  return cfg.cache_dir.empty() ? cfg.out() / "cache" : std::filesystem::path(cfg.cache_dir);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline int cmd_prepare(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  InteractionDataset ds = load_dataset(cfg, err);
  std::filesystem::create_directories(cfg.out());
  TrainConfig tc = cfg.train;
  BipartiteGraph graph = build_graph(ds);
  CooccurrenceGraph G = build_cooccurrence(graph, {.row_cap = tc.cooccurrence_row_cap, .threads = tc.threads});
  NeighborIndex index = NeighborIndex::empty(ds.num_items);
  if (tc.neighbors > 0) {
    index = cached_neighbor_index(cache_dir(cfg), "item", ds.train_hash(), tc.neighbors,
                                  [&] { return build_neighbor_index(G, tc.neighbors, tc.threads); });
  }
  nlohmann::json manifest = dataset_manifest(ds);
  manifest["cooccurrence_nnz"] = G.nnz();
  manifest["cooccurrence_truncated_rows"] = G.truncated_rows;
  manifest["neighbor_k"] = tc.neighbors;
  manifest["neighbor_entries"] = index.total_entries();
  write_json(cfg.out() / "manifest.json", manifest);

  out << std::left << std::setw(10) << "#Users" << std::setw(10) << "#Items" << std::setw(15) << "#Interactions"
      << "Density\n";
  out << std::setw(10) << ds.num_users << std::setw(10) << ds.num_items << std::setw(15) << ds.num_interactions()
      << std::setprecision(5) << ds.density() << '\n';
  out << "train/valid/test: " << ds.train_pairs.size() << '/' << ds.valid_pairs.size() << '/' << ds.test_pairs.size()
      << "; item-item nnz " << G.nnz() << "; neighbor entries " << index.total_entries() << '\n';
  return kOk;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  InteractionDataset ds = load_dataset(cfg, err);
  std::filesystem::create_directories(cfg.out());
  TrainingGraphs tg = TrainingGraphs::build(ds, cfg.train, cache_dir(cfg));
  std::ofstream log(cfg.out() / "train_log.jsonl");
  if (!log) throw DataError("cannot write training log");
  auto sink = [&](const nlohmann::json& line) {
    log << line.dump() << '\n';
    log.flush();
    out << line.dump() << '\n';
  };
  auto warn = [&](const nlohmann::json& w) { err << "warning: " << w["warning"].get<std::string>() << '\n'; };
  FitResult result = fit(ds, tg, cfg.train, sink, warn);
  save_checkpoint(cfg.checkpoint_path(), result.model);
  out << "best epoch " << result.best_epoch;
  if (result.validation_used) out << " (validation Recall@" << cfg.train.eval_cutoff << " " << result.best_recall << ")";
  out << "; checkpoint " << cfg.checkpoint_path().string() << '\n';
  return kOk;
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  InteractionDataset ds = load_dataset(cfg, err);
  EmbeddingModel model = load_checkpoint(cfg.checkpoint_path());
  if (model.num_users() != ds.num_users || model.num_items() != ds.num_items) {
    throw DataError("checkpoint shape does not match the dataset");
  }
  EvalReport report = evaluate(model, ds, cfg.cutoffs, Split::test, cfg.train.threads);
  std::filesystem::create_directories(cfg.out());
  write_json(cfg.out() / "eval_report.json", report.to_json());
  out << report.to_table();
  return kOk;
}

// Connected-component limit checks and user-item decomposition checks on one
// bipartite graph; appends report lines and returns pass/fail.
inline bool oracle_check_graph(const std::string& name, const oracle::DenseGraph& g, std::mt19937_64& rng,
                               std::ostream& out) {
  bool ok = true;
  double worst_limit = 0.0;
  std::size_t worst_layers = 0;
  for (const auto& comp : g.components()) {
    auto res = oracle::converge_to_limit(g.induced(comp));
    ok = ok && res.converged;
    worst_limit = std::max(worst_limit, res.residual);
    worst_layers = std::max(worst_layers, res.layers);
  }
  out << (ok ? "PASS" : "FAIL") << "  limit          " << name << "  n=" << g.n << " max_residual=" << std::scientific
      << std::setprecision(3) << worst_limit << " layers=" << worst_layers << std::defaultfloat << '\n';
  if (g.num_users > 0 && g.num_users < g.n) {
    auto E = oracle::random_embeddings(rng, g.n, 8);
    double r = oracle::max_decomposition_residual(g, E);
    bool dec_ok = r <= 1e-10;
    out << (dec_ok ? "PASS" : "FAIL") << "  decomposition  " << name << "  max_residual=" << std::scientific
        << std::setprecision(3) << r << std::defaultfloat << '\n';
    ok = ok && dec_ok;
  }
  return ok;
}

inline int cmd_oracle_check(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  std::mt19937_64 rng(cfg.oracle_seed);
  bool ok = true;
  for (std::size_t k = 0; k < cfg.oracle_random; ++k) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
    auto g = oracle::random_connected_graph(rng, n, std::uniform_real_distribution<double>(0.0, 0.2)(rng));
    ok = oracle_check_graph("random-" + std::to_string(k), g, rng, out) && ok;
    std::size_t users = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    std::size_t items = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    auto b = oracle::random_bipartite_graph(rng, users, items, 0.35);
    ok = oracle_check_graph("bipartite-" + std::to_string(k), b, rng, out) && ok;
  }
  for (const auto& path : cfg.oracle_graphs) {
    auto frag = load_pair_list(path);
    auto ds = assemble(frag, std::nullopt, InteractionFragment{}, {.holdout_fraction = 0.0});
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& p : ds.train_pairs) edges.emplace_back(p.user, p.item);
    auto g = oracle::DenseGraph::bipartite(ds.num_users, ds.num_items, edges);
    ok = oracle_check_graph(path, g, rng, out) && ok;
  }
  out << (ok ? "oracle-check: all passed\n" : "oracle-check: FAILURES\n");
  return ok ? kOk : kCheckFailed;
}

inline int cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  InteractionDataset ds = load_dataset(cfg, err);
  std::filesystem::create_directories(cfg.out());
  auto lambdas = cfg.sweep_lambdas.empty() ? std::vector<double>{cfg.train.lambda} : cfg.sweep_lambdas;
  auto gammas = cfg.sweep_gammas.empty() ? std::vector<double>{cfg.train.gamma} : cfg.sweep_gammas;
  auto ks = cfg.sweep_neighbors.empty() ? std::vector<std::size_t>{cfg.train.neighbors} : cfg.sweep_neighbors;
  EvaluationPlan test_plan = EvaluationPlan::build(ds, Split::test);

  std::ofstream csv(cfg.out() / "sweep.csv");
  if (!csv) throw DataError("cannot write sweep.csv");
  csv << "lambda,gamma,K,recall@20,ndcg@20\n";
  out << "lambda,gamma,K,recall@20,ndcg@20\n";
  for (std::size_t k : ks) {
    for (double lambda : lambdas) {
      for (double gamma : gammas) {
        TrainConfig tc = cfg.train;
        tc.lambda = lambda;
        tc.gamma = gamma;
        tc.neighbors = k;
        TrainingGraphs tg = TrainingGraphs::build(ds, tc, cache_dir(cfg));
        FitResult fr = fit(ds, tg, tc);
        EvalReport rep = evaluate(fr.model, test_plan, {20}, tc.threads);
        std::ostringstream row;
        row << lambda << ',' << gamma << ',' << k << ',' << std::setprecision(6) << rep.recall[0] << ','
            << rep.ndcg[0] << '\n';
        csv << row.str();
        csv.flush();
        out << row.str();
      }
    }
  }
  return kOk;
}

inline void add_options(CLI::App& app, RunConfig& cfg) {
  TrainConfig& t = cfg.train;
  app.add_option("--data-train", cfg.data_train, "Train interactions file");
  app.add_option("--data-valid", cfg.data_valid, "Validation interactions (default: hold out part of train)");
  app.add_option("--data-test", cfg.data_test, "Test interactions file");
  app.add_option("--format", cfg.format, "Input format: adjacency | pairs")->capture_default_str();
  app.add_option("--holdout", cfg.holdout, "Train fraction held out when no validation file is given")
      ->capture_default_str();
  app.add_option("--lambda", t.lambda, "Weight of the user-item constraint loss")->capture_default_str();
  app.add_option("--gamma", t.gamma, "Weight of the item-item constraint loss")->capture_default_str();
  app.add_option("--K", t.neighbors, "Neighbors per item")->capture_default_str();
  app.add_option("--R", t.negatives, "Negatives per positive")->capture_default_str();
  app.add_option("--dim", t.dim, "Embedding dimension")->capture_default_str();
  app.add_option("--lr", t.lr, "Learning rate")->capture_default_str();
  app.add_option("--batch-size", t.batch_size, "Positives per batch")->capture_default_str();
  app.add_option("--reg", t.reg, "L2 weight on touched rows")->capture_default_str();
  app.add_option("--init-std", t.init_std, "Std of the Gaussian initialisation")->capture_default_str();
  app.add_option("--epochs", t.max_epochs, "Maximum epochs")->capture_default_str();
  app.add_option("--patience", t.patience, "Evaluations without improvement before stopping")->capture_default_str();
  app.add_option("--eval-interval", t.eval_interval, "Epochs between validation runs")->capture_default_str();
  app.add_option("--seed", t.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", t.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_flag("--item-prime", t.use_item_prime, "Ablation: item-item dot products in the item loss");
  app.add_flag("--user-loss", t.use_user_loss, "Ablation: add the user-user constraint loss");
  app.add_option("--user-weight", t.user_weight, "Weight of the user-user loss")->capture_default_str();
  app.add_option("--user-K", t.user_neighbors, "Neighbors per user for the user-user loss")->capture_default_str();
  app.add_flag("--strict-negatives", t.strict_negatives, "Exclude all train items of the user from negatives");
  app.add_flag("--normalize-in-loss", t.normalize_in_loss, "Cosine instead of dot products inside the losses");
  app.add_option("--row-cap", t.cooccurrence_row_cap, "Max entries per co-occurrence row")->capture_default_str();
  app.add_option("--checkpoint", cfg.checkpoint, "Checkpoint path (default <out>/model.ckpt)");
  app.add_option("--cutoffs", cfg.cutoffs, "Ranking cutoffs")->delimiter(',')->capture_default_str();
  app.add_option("--out", cfg.out_dir, "Output directory")->capture_default_str();
  app.add_option("--cache-dir", cfg.cache_dir, "Neighbor index cache directory")->envname("ULTRAGCN_CACHE_DIR");
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"UltraGCN collaborative filtering"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  RunConfig cfg;
  add_options(app, cfg);

  auto* prepare = app.add_subcommand("prepare", "Load data, build graphs and the neighbor index, print statistics");
  auto* train = app.add_subcommand("train", "Train embeddings and write the best checkpoint");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Verify message-passing identities on small graphs");
  oracle_cmd->add_option("--graph", cfg.oracle_graphs, "Pair-list graph file to check (repeatable)");
  oracle_cmd->add_option("--random-graphs", cfg.oracle_random, "Number of random graphs")->capture_default_str();
  oracle_cmd->add_option("--oracle-seed", cfg.oracle_seed, "Seed for random graphs")->capture_default_str();
  auto* sweep = app.add_subcommand("sweep", "Grid over lambda, gamma, K; writes sweep.csv");
  sweep->add_option("--lambdas", cfg.sweep_lambdas, "Lambda grid")->delimiter(',');
  sweep->add_option("--gammas", cfg.sweep_gammas, "Gamma grid")->delimiter(',');
  sweep->add_option("--Ks", cfg.sweep_neighbors, "K grid")->delimiter(',');
  for (auto* sub : {prepare, train, evaluate_cmd, oracle_cmd, sweep}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    cfg.train.threads = resolve_threads(cfg.train.threads);
    if (!cfg.cutoffs.empty()) {
      for (auto c : cfg.cutoffs)
        if (c == 0) throw ConfigError("cutoffs must be >= 1");
    } else {
      throw ConfigError("--cutoffs must not be empty");
    }
    cfg.train.validate();
    if (prepare->parsed()) return cmd_prepare(cfg, out, err);
    if (train->parsed()) return cmd_train(cfg, out, err);
    if (evaluate_cmd->parsed()) return cmd_evaluate(cfg, out, err);
    if (oracle_cmd->parsed()) return cmd_oracle_check(cfg, out, err);
    if (sweep->parsed()) return cmd_sweep(cfg, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DomainError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kConfigError;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace ultragcn::cli
