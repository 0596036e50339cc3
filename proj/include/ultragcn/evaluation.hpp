#pragma once

// Full-ranking top-K evaluation: every item a user has not interacted with is
// a candidate; Recall@K and binary-relevance NDCG@K averaged over users.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultragcn/dataset.hpp"
#include "ultragcn/errors.hpp"
#include "ultragcn/model.hpp"
#include "ultragcn/parallel.hpp"

namespace ultragcn {

// Top `cutoff` items by descending score, ties to the smaller index. Items
// listed in `masked` (sorted) never appear.
inline std::vector<Index> rank_user(std::span<const double> scores, std::span<const Index> masked,
                                    std::size_t cutoff) {
  std::vector<Index> candidates;
  candidates.reserve(scores.size());
  auto mask_it = masked.begin();
  for (Index i = 0; i < scores.size(); ++i) {
    while (mask_it != masked.end() && *mask_it < i) ++mask_it;
    if (mask_it != masked.end() && *mask_it == i) continue;
    candidates.push_back(i);
  }
  std::size_t keep = std::min(cutoff, candidates.size());
  auto better = [&](Index a, Index b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    better);
  candidates.resize(keep);
  return candidates;
}

inline void score_all_items(const EmbeddingModel& model, Index u, std::vector<double>& scores) {
  scores.resize(model.num_items());
  auto eu = model.user(u);
  for (Index i = 0; i < model.num_items(); ++i) scores[i] = dot(eu, model.item(i));
}

inline std::vector<Index> rank_user(const EmbeddingModel& model, Index u, std::span<const Index> masked,
                                    std::size_t cutoff) {
  std::vector<double> scores;
  score_all_items(model, u, scores);
  return rank_user(scores, masked, cutoff);
}

// |topk[:k] ∩ test| / |test|; `test` sorted.
inline double recall_at_k(std::span<const Index> topk, std::span<const Index> test, std::size_t k) {
  if (test.empty()) throw DomainError("recall_at_k: empty test set");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, topk.size()); ++r) {
    if (std::binary_search(test.begin(), test.end(), topk[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// DCG with 1/log2(rank + 1) gains (rank from 1) over IDCG of min(|test|, k)
// leading hits.
inline double ndcg_at_k(std::span<const Index> topk, std::span<const Index> test, std::size_t k) {
  if (test.empty()) throw DomainError("ndcg_at_k: empty test set");
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, topk.size()); ++r) {
    if (std::binary_search(test.begin(), test.end(), topk[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, test.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

struct UserTargets {
  Index user;
  std::vector<Index> masked;   // sorted
  std::vector<Index> targets;  // sorted
};

// Per-user mask and target lists for one split. Validation ranking masks
// train items; test ranking masks train and validation items.
class EvaluationPlan {
 public:
  static EvaluationPlan build(const InteractionDataset& ds, Split split) {
    if (split == Split::train) throw ConfigError("cannot evaluate on the train split");
    std::vector<std::vector<Index>> masked(ds.num_users), targets(ds.num_users);
    for (const auto& p : ds.train_pairs) masked[p.user].push_back(p.item);
    if (split == Split::test) {
      for (const auto& p : ds.valid_pairs) masked[p.user].push_back(p.item);
    }
    for (const auto& p : split_pairs(ds, split)) targets[p.user].push_back(p.item);
    EvaluationPlan plan;
    plan.num_items_ = ds.num_items;
    for (Index u = 0; u < ds.num_users; ++u) {
      if (targets[u].empty()) continue;
      std::sort(masked[u].begin(), masked[u].end());
      masked[u].erase(std::unique(masked[u].begin(), masked[u].end()), masked[u].end());
      std::sort(targets[u].begin(), targets[u].end());
      plan.users_.push_back({u, std::move(masked[u]), std::move(targets[u])});
    }
    return plan;
  }

  const std::vector<UserTargets>& users() const { return users_; }
  bool empty() const { return users_.empty(); }
  Index num_items() const { return num_items_; }

 private:
  std::vector<UserTargets> users_;
  Index num_items_ = 0;
};

struct EvalReport {
  std::vector<std::size_t> cutoffs;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::size_t num_evaluated_users = 0;

  double recall_at(std::size_t k) const { return recall.at(position(k)); }
  double ndcg_at(std::size_t k) const { return ndcg.at(position(k)); }

  nlohmann::json to_json() const {
    nlohmann::json metrics = nlohmann::json::array();
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      metrics.push_back({{"k", cutoffs[c]}, {"recall", recall[c]}, {"ndcg", ndcg[c]}});
    }
    return {{"evaluated_users", num_evaluated_users}, {"metrics", metrics}};
  }

  std::string to_table() const {
    std::ostringstream out;
    char line[96];
    std::snprintf(line, sizeof(line), "%8s %12s %12s\n", "K", "Recall@K", "NDCG@K");
    out << line;
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      std::snprintf(line, sizeof(line), "%8zu %12.6f %12.6f\n", cutoffs[c], recall[c], ndcg[c]);
      out << line;
    }
    out << "evaluated users: " << num_evaluated_users << '\n';
    return out.str();
  }

 private:
  std::size_t position(std::size_t k) const {
    auto it = std::find(cutoffs.begin(), cutoffs.end(), k);
    if (it == cutoffs.end()) throw ConfigError("cutoff " + std::to_string(k) + " not evaluated");
    return static_cast<std::size_t>(it - cutoffs.begin());
  }
};

// Per-user metrics are stored then summed in user order, so the report does
// not depend on the thread count.
inline EvalReport evaluate(const EmbeddingModel& model, const EvaluationPlan& plan, std::vector<std::size_t> cutoffs,
                           unsigned threads = 1) {
  if (plan.empty()) throw DataError("no evaluable users");
  if (cutoffs.empty()) throw ConfigError("at least one cutoff required");
  if (std::find(cutoffs.begin(), cutoffs.end(), 0u) != cutoffs.end()) throw ConfigError("cutoffs must be >= 1");
  const std::size_t max_k = *std::max_element(cutoffs.begin(), cutoffs.end());
  const auto& users = plan.users();
  const std::size_t nc = cutoffs.size();
  std::vector<double> per_recall(users.size() * nc), per_ndcg(users.size() * nc);

  parallel_for(users.size(), std::max(1u, threads), [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<double> scores;
    for (std::size_t x = begin; x < end; ++x) {
      const auto& ut = users[x];
      score_all_items(model, ut.user, scores);
      auto top = rank_user(scores, ut.masked, max_k);
      for (std::size_t c = 0; c < nc; ++c) {
        per_recall[x * nc + c] = recall_at_k(top, ut.targets, cutoffs[c]);
        per_ndcg[x * nc + c] = ndcg_at_k(top, ut.targets, cutoffs[c]);
      }
    }
  });

  EvalReport report;
  report.cutoffs = std::move(cutoffs);
  report.recall.assign(nc, 0.0);
  report.ndcg.assign(nc, 0.0);
  report.num_evaluated_users = users.size();
  for (std::size_t x = 0; x < users.size(); ++x) {
    for (std::size_t c = 0; c < nc; ++c) {
      report.recall[c] += per_recall[x * nc + c];
      report.ndcg[c] += per_ndcg[x * nc + c];
    }
  }
  for (std::size_t c = 0; c < nc; ++c) {
    report.recall[c] /= static_cast<double>(users.size());
    report.ndcg[c] /= static_cast<double>(users.size());
  }
  return report;
}

inline EvalReport evaluate(const EmbeddingModel& model, const InteractionDataset& ds, std::vector<std::size_t> cutoffs,
                           Split split = Split::test, unsigned threads = 1) {
  return evaluate(model, EvaluationPlan::build(ds, split), std::move(cutoffs), threads);
}

}  // namespace ultragcn
