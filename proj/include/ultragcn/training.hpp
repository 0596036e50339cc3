#pragma once

// Negative sampling, adaptive-moment updates on touched rows, epoch loop and
// validation-based early stopping.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultragcn/dataset.hpp"
#include "ultragcn/errors.hpp"
#include "ultragcn/evaluation.hpp"
#include "ultragcn/graph.hpp"
#include "ultragcn/model.hpp"

namespace ultragcn {

struct TrainConfig {
  std::size_t dim = 64;
  double lr = 1e-4;
  std::size_t batch_size = 1024;
  std::size_t negatives = 300;  // R
  std::size_t neighbors = 10;   // K
  double lambda = 1.0;
  double gamma = 2.5;
  double reg = 1e-4;
  double init_std = 1e-4;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;       // evaluations without improvement
  std::size_t eval_interval = 5;   // epochs between validation runs
  std::size_t eval_cutoff = 20;
  std::uint64_t seed = 2021;
  bool use_item_prime = false;     // L'_I in place of L_I
  bool use_user_loss = false;      // add L_U
  double user_weight = 1.0;        // weight of L_U when enabled
  std::size_t user_neighbors = 10;
  bool strict_negatives = false;   // exclude the user's whole train set
  bool normalize_in_loss = false;
  unsigned threads = 1;
  std::size_t cooccurrence_row_cap = 50000;

  void validate() const {
    if (dim == 0) throw ConfigError("dim must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw ConfigError("lambda and gamma must be >= 0");
    if (!(reg >= 0.0)) throw ConfigError("reg must be >= 0");
    if (!(init_std >= 0.0)) throw ConfigError("init_std must be >= 0");
    if (!(user_weight >= 0.0)) throw ConfigError("user_weight must be >= 0");
    if (eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
    if (eval_cutoff == 0) throw ConfigError("eval_cutoff must be >= 1");
    if (threads == 0) throw ConfigError("threads must be resolved before training");
  }

  bool needs_item_index() const { return gamma > 0.0 && neighbors > 0; }
  bool needs_user_index() const { return use_user_loss && user_weight > 0.0 && user_neighbors > 0; }

  Objective objective() const {
    return {.lambda = lambda,
            .gamma = neighbors > 0 ? gamma : 0.0,
            .item_loss = use_item_prime ? ItemLoss::item_item : ItemLoss::user_item,
            .user_weight = needs_user_index() ? user_weight : 0.0,
            .normalize = normalize_in_loss};
  }
};

// Uniform with replacement over [0, num_items) minus `positive`.
inline void sample_negatives(std::mt19937_64& rng, std::size_t count, Index num_items, Index positive,
                             std::vector<Index>& out) {
  if (count == 0) return;
  if (num_items <= 1) throw DataError("negative sampling: no candidate item besides the positive");
  std::uniform_int_distribution<Index> pick(0, num_items - 2);
  for (std::size_t r = 0; r < count; ++r) {
    Index j = pick(rng);
    out.push_back(j >= positive ? j + 1 : j);
  }
}

inline std::vector<Index> sample_negatives(std::mt19937_64& rng, std::size_t count, Index num_items, Index positive) {
  std::vector<Index> out;
  out.reserve(count);
  sample_negatives(rng, count, num_items, positive, out);
  return out;
}

// Rejection sampling outside the user's sorted train items.
inline void sample_negatives_strict(std::mt19937_64& rng, std::size_t count, Index num_items,
                                    std::span<const Index> interacted, std::vector<Index>& out) {
  if (count == 0) return;
  if (interacted.size() >= num_items) throw DataError("negative sampling: user interacted with every item");
  std::uniform_int_distribution<Index> pick(0, num_items - 1);
  for (std::size_t r = 0; r < count;) {
    Index j = pick(rng);
    if (std::binary_search(interacted.begin(), interacted.end(), j)) continue;
    out.push_back(j);
    ++r;
  }
}

inline EmbeddingModel init_embeddings(Index num_users, Index num_items, const TrainConfig& config,
                                      std::mt19937_64& rng) {
  EmbeddingModel model(num_users, num_items, config.dim);
  if (config.init_std == 0.0) return model;
  std::normal_distribution<double> gauss(0.0, config.init_std);
  for (double& v : model.user_matrix()) v = gauss(rng);
  for (double& v : model.item_matrix()) v = gauss(rng);
  return model;
}

// Adam with per-row moments. Rows are only updated when a batch touches
// them; bias correction uses the global step count.
class AdamOptimizer {
 public:
  AdamOptimizer(const EmbeddingModel& model, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        m_users_(model.user_matrix().size(), 0.0),
        v_users_(model.user_matrix().size(), 0.0),
        m_items_(model.item_matrix().size(), 0.0),
        v_items_(model.item_matrix().size(), 0.0) {}

  std::uint64_t steps() const { return steps_; }
  double lr() const { return lr_; }

  void step(EmbeddingModel& model, const SparseGradient& grad) {
    ++steps_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const std::size_t d = model.dim();
    for (Index u : grad.touched_users()) update(model.user(u), grad.user(u), std::size_t{u} * d, m_users_, v_users_, bc1, bc2);
    for (Index i : grad.touched_items()) update(model.item(i), grad.item(i), std::size_t{i} * d, m_items_, v_items_, bc1, bc2);
  }

  bool moments_finite() const {
    auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return finite(m_users_) && finite(v_users_) && finite(m_items_) && finite(v_items_);
  }

 private:
  void update(std::span<double> row, std::span<const double> g, std::size_t offset, std::vector<double>& m,
              std::vector<double>& v, double bc1, double bc2) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      double& mk = m[offset + k];
      double& vk = v[offset + k];
      mk = beta1_ * mk + (1.0 - beta1_) * g[k];
      vk = beta2_ * vk + (1.0 - beta2_) * g[k] * g[k];
      row[k] -= lr_ * (mk / bc1) / (std::sqrt(vk / bc2) + eps_);
    }
  }

  double lr_, beta1_, beta2_, eps_;
  std::uint64_t steps_ = 0;
  std::vector<double> m_users_, v_users_, m_items_, v_items_;
};

// Structures derived from the train split that stay fixed during training.
struct TrainingGraphs {
  BipartiteGraph graph;
  NeighborIndex item_index;
  NeighborIndex user_index;

  static TrainingGraphs build(const InteractionDataset& ds, const TrainConfig& config,
                              const std::filesystem::path& cache_dir = {}) {
    TrainingGraphs tg;
    tg.graph = build_graph(ds);
    CooccurrenceOptions co{.row_cap = config.cooccurrence_row_cap, .threads = config.threads};
    std::uint64_t key = ds.train_hash();
    if (config.needs_item_index()) {
      tg.item_index = cached_neighbor_index(cache_dir, "item", key, config.neighbors, [&] {
        return build_neighbor_index(build_cooccurrence(tg.graph, co), config.neighbors, config.threads);
      });
    } else {
      tg.item_index = NeighborIndex::empty(ds.num_items);
    }
    if (config.needs_user_index()) {
      tg.user_index = cached_neighbor_index(cache_dir, "user", key, config.user_neighbors, [&] {
        return build_neighbor_index(build_user_cooccurrence(tg.graph, co), config.user_neighbors, config.threads);
      });
    } else {
      tg.user_index = NeighborIndex::empty(ds.num_users);
    }
    return tg;
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  double loss_o = 0.0;  // means over batches
  double loss_c = 0.0;
  double loss_i = 0.0;
  double loss_u = 0.0;
  double total = 0.0;
  double seconds = 0.0;
};

// Mutable state threaded through successive epochs.
struct TrainerState {
  EmbeddingModel model;
  AdamOptimizer optimizer;
  std::mt19937_64 rng;
  GradientWorkspace workspace;
  std::size_t epochs_done = 0;

  TrainerState(EmbeddingModel m, const TrainConfig& config, std::mt19937_64 r)
      : model(std::move(m)),
        optimizer(model, config.lr),
        rng(std::move(r)),
        workspace(model.num_users(), model.num_items(), model.dim(), config.threads) {}

  static TrainerState initial(const InteractionDataset& ds, const TrainConfig& config) {
    std::mt19937_64 rng(config.seed);
    EmbeddingModel model = init_embeddings(ds.num_users, ds.num_items, config, rng);
    return TrainerState(std::move(model), config, std::move(rng));
  }
};

inline EpochStats train_epoch(TrainerState& state, const InteractionDataset& ds, const TrainingGraphs& tg,
                              const TrainConfig& config) {
  auto start = std::chrono::steady_clock::now();
  const Objective objective = config.objective();
  const DegreeView degrees = DegreeView::of(tg.graph);
  EpochStats stats;
  stats.epoch = ++state.epochs_done;

  std::vector<std::size_t> order(ds.train_pairs.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), state.rng);

  TrainBatch batch;
  batch.negatives_per_positive = config.negatives;
  batch.item_neighbors = &tg.item_index;
  batch.user_neighbors = &tg.user_index;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    std::size_t end = std::min(order.size(), begin + config.batch_size);
    batch.positives.clear();
    batch.negatives.clear();
    for (std::size_t k = begin; k < end; ++k) {
      const Interaction& p = ds.train_pairs[order[k]];
      batch.positives.push_back(p);
      if (config.strict_negatives) {
        sample_negatives_strict(state.rng, config.negatives, ds.num_items, tg.graph.user_items.row(p.user),
                                batch.negatives);
      } else {
        sample_negatives(state.rng, config.negatives, ds.num_items, p.item, batch.negatives);
      }
    }
    LossBreakdown loss = gradients(state.model, batch, degrees, objective, config.reg, state.workspace);
    if (!std::isfinite(loss.total)) {
      throw NumericError("non-finite loss in epoch " + std::to_string(stats.epoch) + ", batch " +
                         std::to_string(stats.batches));
    }
    state.optimizer.step(state.model, state.workspace.result());
    stats.loss_o += loss.o;
    stats.loss_c += loss.c;
    stats.loss_i += loss.i;
    stats.loss_u += loss.u;
    stats.total += loss.total;
    ++stats.batches;
  }
  if (stats.batches > 0) {
    double nb = static_cast<double>(stats.batches);
    stats.loss_o /= nb;
    stats.loss_c /= nb;
    stats.loss_i /= nb;
    stats.loss_u /= nb;
    stats.total /= nb;
  }
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

struct FitResult {
  EmbeddingModel model;            // best validation checkpoint (or last, without validation)
  std::vector<nlohmann::json> log;  // one object per epoch
  std::size_t best_epoch = 0;
  double best_recall = -1.0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  bool validation_used = true;
};

inline nlohmann::json epoch_log_line(const EpochStats& s) {
  return {{"epoch", s.epoch},
          {"seconds", s.seconds},
          {"loss", {{"o", s.loss_o}, {"c", s.loss_c}, {"i", s.loss_i}, {"u", s.loss_u}, {"total", s.total}}}};
}

using LogSink = std::function<void(const nlohmann::json&)>;

inline FitResult fit(const InteractionDataset& ds, const TrainingGraphs& tg, const TrainConfig& config,
                     const LogSink& sink = {}, const LogSink& warn = {}) {
  config.validate();
  FitResult result;
  TrainerState state = TrainerState::initial(ds, config);
  EvaluationPlan plan = EvaluationPlan::build(ds, Split::validation);
  result.validation_used = !plan.empty();
  if (!result.validation_used && warn) {
    warn({{"warning", "empty validation split; early stopping disabled"}});
  }
  std::size_t stale = 0;
  for (std::size_t e = 0; e < config.max_epochs; ++e) {
    EpochStats stats = train_epoch(state, ds, tg, config);
    nlohmann::json line = epoch_log_line(stats);
    bool last = e + 1 == config.max_epochs;
    if (result.validation_used && (stats.epoch % config.eval_interval == 0 || last)) {
      EvalReport rep = evaluate(state.model, plan, {config.eval_cutoff}, config.threads);
      double recall = rep.recall[0];
      line["valid"] = {{"k", config.eval_cutoff}, {"recall", recall}, {"ndcg", rep.ndcg[0]}};
      if (recall > result.best_recall) {
        result.best_recall = recall;
        result.best_epoch = stats.epoch;
        result.model = state.model;
        stale = 0;
      } else {
        ++stale;
      }
    }
    result.log.push_back(line);
    if (sink) sink(line);
    result.epochs_run = stats.epoch;
    if (result.validation_used && stale >= config.patience && config.patience > 0) {
      result.early_stopped = true;
      break;
    }
  }
  if (!result.validation_used || result.best_epoch == 0) {
    result.model = state.model;
    result.best_epoch = result.epochs_run;
  }
  return result;
}

inline FitResult fit(const InteractionDataset& ds, const TrainConfig& config, const LogSink& sink = {},
                     const LogSink& warn = {}) {
  config.validate();
  return fit(ds, TrainingGraphs::build(ds, config), config, sink, warn);
}

}  // namespace ultragcn
