#pragma once

// Embedding tables, ranking score, the weighted BCE loss family and its
// analytic gradients.
//
// Every loss term has the form  -w * log sigmoid(s * x(a, b))  where a and b
// are two embedding rows, s is +1 for positive pairs and -1 for sampled
// negatives, and x is the dot product (or cosine when `normalize` is set).
//
//   L_O   : (u, i) w = 1, s = +1;  (u, j) w = 1, s = -1 for each negative j
//   L_C   : same pairs, w = beta(d_u, d_i) / beta(d_u, d_j)
//   L_I   : (u, j) for j in S(i), w = omega_ij, s = +1
//   L'_I  : (i, j) for j in S(i), w = omega_ij, s = +1
//   L_U   : (v, i) for v in S_U(u), w = omega^U_uv, s = +1
//
// total = L_O + lambda L_C + gamma (L_I or L'_I) + user_weight L_U

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ultragcn/dataset.hpp"
#include "ultragcn/errors.hpp"
#include "ultragcn/graph.hpp"
#include "ultragcn/parallel.hpp"

namespace ultragcn {

class EmbeddingModel {
 public:
  EmbeddingModel() = default;
  EmbeddingModel(Index num_users, Index num_items, std::size_t dim)
      : num_users_(num_users),
        num_items_(num_items),
        dim_(dim),
        users_(std::size_t{num_users} * dim, 0.0),
        items_(std::size_t{num_items} * dim, 0.0) {
    if (dim == 0) throw ConfigError("embedding dimension must be >= 1");
  }

  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  std::size_t dim() const { return dim_; }

  std::span<double> user(Index u) { return {users_.data() + std::size_t{u} * dim_, dim_}; }
  std::span<const double> user(Index u) const { return {users_.data() + std::size_t{u} * dim_, dim_}; }
  std::span<double> item(Index i) { return {items_.data() + std::size_t{i} * dim_, dim_}; }
  std::span<const double> item(Index i) const { return {items_.data() + std::size_t{i} * dim_, dim_}; }

  std::vector<double>& user_matrix() { return users_; }
  const std::vector<double>& user_matrix() const { return users_; }
  std::vector<double>& item_matrix() { return items_; }
  const std::vector<double>& item_matrix() const { return items_; }

  bool all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(users_.begin(), users_.end(), finite) && std::all_of(items_.begin(), items_.end(), finite);
  }

  friend bool operator==(const EmbeddingModel&, const EmbeddingModel&) = default;

 private:
  Index num_users_ = 0;
  Index num_items_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> users_;  // row-major num_users x dim
  std::vector<double> items_;  // row-major num_items x dim
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double score(const EmbeddingModel& model, Index u, Index i) { return dot(model.user(u), model.item(i)); }

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) { return -softplus(-x); }

struct TrainBatch {
  std::vector<Interaction> positives{};
  std::vector<Index> negatives{};  // negatives_per_positive entries per positive
  std::size_t negatives_per_positive = 0;
  const NeighborIndex* item_neighbors = nullptr;
  const NeighborIndex* user_neighbors = nullptr;

  std::span<const Index> negatives_of(std::size_t p) const {
    return {negatives.data() + p * negatives_per_positive, negatives_per_positive};
  }
  std::span<const Neighbor> item_neighbors_of(Index i) const {
    return item_neighbors ? item_neighbors->neighbors(i) : std::span<const Neighbor>{};
  }
  std::span<const Neighbor> user_neighbors_of(Index u) const {
    return user_neighbors ? user_neighbors->neighbors(u) : std::span<const Neighbor>{};
  }
};

struct DegreeView {
  std::span<const std::uint32_t> user;
  std::span<const std::uint32_t> item;

  static DegreeView of(const BipartiteGraph& g) { return {g.user_degree, g.item_degree}; }
};

enum class ItemLoss { user_item, item_item };

struct Objective {
  double lambda = 0.0;
  double gamma = 0.0;
  ItemLoss item_loss = ItemLoss::user_item;
  double user_weight = 0.0;
  bool normalize = false;  // cosine instead of raw dot product inside the losses
};

namespace detail {

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double pair_score(std::span<const double> a, std::span<const double> b, bool normalize) {
  double x = dot(a, b);
  if (!normalize) return x;
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return x / (na * nb);
}

inline void check_batch(const EmbeddingModel& model, const TrainBatch& batch) {
  if (batch.negatives.size() != batch.positives.size() * batch.negatives_per_positive) {
    throw DataError("batch negatives do not match negatives_per_positive");
  }
  for (const auto& p : batch.positives) {
    if (p.user >= model.num_users() || p.item >= model.num_items()) throw DataError("batch index out of range");
  }
  for (Index j : batch.negatives) {
    if (j >= model.num_items()) throw DataError("negative item out of range");
  }
}

}  // namespace detail

inline double loss_O(const EmbeddingModel& model, const TrainBatch& batch, bool normalize = false) {
  detail::check_batch(model, batch);
  double loss = 0.0;
  for (std::size_t p = 0; p < batch.positives.size(); ++p) {
    auto [u, i] = batch.positives[p];
    loss += softplus(-detail::pair_score(model.user(u), model.item(i), normalize));
    for (Index j : batch.negatives_of(p)) loss += softplus(detail::pair_score(model.user(u), model.item(j), normalize));
  }
  return loss;
}

inline double loss_C(const EmbeddingModel& model, const TrainBatch& batch, const DegreeView& degrees,
                     bool normalize = false) {
  detail::check_batch(model, batch);
  double loss = 0.0;
  for (std::size_t p = 0; p < batch.positives.size(); ++p) {
    auto [u, i] = batch.positives[p];
    std::uint32_t du = degrees.user[u];
    loss += beta(du, degrees.item[i]) * softplus(-detail::pair_score(model.user(u), model.item(i), normalize));
    for (Index j : batch.negatives_of(p)) {
      loss += beta(du, degrees.item[j]) * softplus(detail::pair_score(model.user(u), model.item(j), normalize));
    }
  }
  return loss;
}

inline double loss_I(const EmbeddingModel& model, const TrainBatch& batch, bool normalize = false) {
  detail::check_batch(model, batch);
  double loss = 0.0;
  for (const auto& [u, i] : batch.positives) {
    for (const auto& nb : batch.item_neighbors_of(i)) {
      loss += nb.weight * softplus(-detail::pair_score(model.user(u), model.item(nb.index), normalize));
    }
  }
  return loss;
}

inline double loss_I_prime(const EmbeddingModel& model, const TrainBatch& batch, bool normalize = false) {
  detail::check_batch(model, batch);
  double loss = 0.0;
  for (const auto& [u, i] : batch.positives) {
    for (const auto& nb : batch.item_neighbors_of(i)) {
      loss += nb.weight * softplus(-detail::pair_score(model.item(i), model.item(nb.index), normalize));
    }
  }
  return loss;
}

inline double loss_U(const EmbeddingModel& model, const TrainBatch& batch, bool normalize = false) {
  detail::check_batch(model, batch);
  double loss = 0.0;
  for (const auto& [u, i] : batch.positives) {
    for (const auto& nb : batch.user_neighbors_of(u)) {
      loss += nb.weight * softplus(-detail::pair_score(model.user(nb.index), model.item(i), normalize));
    }
  }
  return loss;
}

// Terms with zero weight are skipped, so lambda = gamma = 0 returns loss_O
// unchanged.
inline double total_loss(const EmbeddingModel& model, const TrainBatch& batch, const DegreeView& degrees,
                         const Objective& objective) {
  if (objective.lambda < 0.0 || objective.gamma < 0.0 || objective.user_weight < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  double loss = loss_O(model, batch, objective.normalize);
  if (objective.lambda != 0.0) loss += objective.lambda * loss_C(model, batch, degrees, objective.normalize);
  if (objective.gamma != 0.0) {
    loss += objective.gamma * (objective.item_loss == ItemLoss::user_item ? loss_I(model, batch, objective.normalize)
                                                                         : loss_I_prime(model, batch, objective.normalize));
  }
  if (objective.user_weight != 0.0) loss += objective.user_weight * loss_U(model, batch, objective.normalize);
  return loss;
}

inline double total_loss(const EmbeddingModel& model, const TrainBatch& batch, const DegreeView& degrees,
                         double lambda, double gamma) {
  return total_loss(model, batch, degrees, Objective{.lambda = lambda, .gamma = gamma});
}

// Gradient rows accumulated densely with a touched list, so clearing and
// iterating only cost the rows a batch actually used.
class SparseGradient {
 public:
  SparseGradient() = default;
  SparseGradient(Index num_users, Index num_items, std::size_t dim)
      : dim_(dim),
        users_(std::size_t{num_users} * dim, 0.0),
        items_(std::size_t{num_items} * dim, 0.0),
        user_mark_(num_users, 0),
        item_mark_(num_items, 0) {}

  std::size_t dim() const { return dim_; }

  std::span<double> user_row(Index u) {
    if (!user_mark_[u]) {
      user_mark_[u] = 1;
      touched_users_.push_back(u);
    }
    return {users_.data() + std::size_t{u} * dim_, dim_};
  }
  std::span<double> item_row(Index i) {
    if (!item_mark_[i]) {
      item_mark_[i] = 1;
      touched_items_.push_back(i);
    }
    return {items_.data() + std::size_t{i} * dim_, dim_};
  }
  std::span<const double> user(Index u) const { return {users_.data() + std::size_t{u} * dim_, dim_}; }
  std::span<const double> item(Index i) const { return {items_.data() + std::size_t{i} * dim_, dim_}; }

  const std::vector<Index>& touched_users() const { return touched_users_; }
  const std::vector<Index>& touched_items() const { return touched_items_; }

  void clear() {
    for (Index u : touched_users_) {
      std::fill_n(users_.begin() + static_cast<std::ptrdiff_t>(std::size_t{u} * dim_), dim_, 0.0);
      user_mark_[u] = 0;
    }
    for (Index i : touched_items_) {
      std::fill_n(items_.begin() + static_cast<std::ptrdiff_t>(std::size_t{i} * dim_), dim_, 0.0);
      item_mark_[i] = 0;
    }
    touched_users_.clear();
    touched_items_.clear();
  }

  void add(const SparseGradient& other) {
    for (Index u : other.touched_users_) {
      auto dst = user_row(u);
      auto src = other.user(u);
      for (std::size_t k = 0; k < dim_; ++k) dst[k] += src[k];
    }
    for (Index i : other.touched_items_) {
      auto dst = item_row(i);
      auto src = other.item(i);
      for (std::size_t k = 0; k < dim_; ++k) dst[k] += src[k];
    }
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> users_;
  std::vector<double> items_;
  std::vector<char> user_mark_;
  std::vector<char> item_mark_;
  std::vector<Index> touched_users_;
  std::vector<Index> touched_items_;
};

// One buffer per worker; buffer 0 receives the merged result.
class GradientWorkspace {
 public:
  GradientWorkspace(Index num_users, Index num_items, std::size_t dim, unsigned threads = 1) {
    buffers_.reserve(std::max(1u, threads));
    for (unsigned t = 0; t < std::max(1u, threads); ++t) buffers_.emplace_back(num_users, num_items, dim);
  }

  unsigned threads() const { return static_cast<unsigned>(buffers_.size()); }
  SparseGradient& buffer(std::size_t t) { return buffers_[t]; }
  SparseGradient& result() { return buffers_[0]; }
  const SparseGradient& result() const { return buffers_[0]; }

 private:
  std::vector<SparseGradient> buffers_;
};

struct LossBreakdown {
  double o = 0.0;
  double c = 0.0;
  double i = 0.0;        // L_I or L'_I, whichever the objective uses
  double u = 0.0;
  double penalty = 0.0;  // reg * sum of squared norms over touched rows
  double total = 0.0;    // o + lambda c + gamma i + user_weight u (penalty excluded)

  void add(const LossBreakdown& other) {
    o += other.o;
    c += other.c;
    i += other.i;
    u += other.u;
  }
};

namespace detail {

// grad_a += coef * dx/da for the pair score x = x(a, b).
inline void add_score_grad(std::span<double> grad_a, std::span<const double> a, std::span<const double> b,
                           double coef, bool normalize, double x) {
  const std::size_t d = a.size();
  if (!normalize) {
    for (std::size_t k = 0; k < d; ++k) grad_a[k] += coef * b[k];
    return;
  }
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return;
  for (std::size_t k = 0; k < d; ++k) grad_a[k] += coef * (b[k] / nb - x * a[k] / na) / na;
}

// Accumulates -w log sigmoid(s x(a, b)) into grad rows; returns softplus(-s x).
template <typename RowA, typename RowB>
double accumulate_term(std::span<const double> a, std::span<const double> b, RowA&& grad_a, RowB&& grad_b,
                       double sign, double weight, bool normalize) {
  double x = pair_score(a, b, normalize);
  double coef = -weight * sign * sigmoid(-sign * x);
  add_score_grad(grad_a(), a, b, coef, normalize, x);
  add_score_grad(grad_b(), b, a, coef, normalize, x);
  return softplus(-sign * x);
}

}  // namespace detail

// Analytic gradient of the objective plus 2 * reg * e for every touched row.
// Positives are split into contiguous chunks per worker and merged in worker
// order, so the result depends only on the thread count.
inline LossBreakdown gradients(const EmbeddingModel& model, const TrainBatch& batch, const DegreeView& degrees,
                               const Objective& objective, double reg, GradientWorkspace& workspace) {
  detail::check_batch(model, batch);
  const bool norm = objective.normalize;
  const bool use_c = objective.lambda != 0.0;
  const bool use_i = objective.gamma != 0.0;
  const bool use_u = objective.user_weight != 0.0;
  if (use_u && batch.user_neighbors == nullptr) throw ConfigError("user-user loss enabled without a user index");

  for (unsigned t = 0; t < workspace.threads(); ++t) workspace.buffer(t).clear();
  std::size_t n = batch.positives.size();
  std::vector<LossBreakdown> partial(parallel_workers(n, workspace.threads()));

  parallel_for(n, workspace.threads(), [&](std::size_t begin, std::size_t end, std::size_t w) {
    SparseGradient& g = workspace.buffer(w);
    LossBreakdown& part = partial[w];
    for (std::size_t p = begin; p < end; ++p) {
      const auto [u, i] = batch.positives[p];
      auto eu = model.user(u);
      auto user_grad = [&] { return g.user_row(u); };
      std::uint32_t du = degrees.user.empty() ? 0 : degrees.user[u];

      double w_pos = 1.0;
      double b_pos = 0.0;
      if (use_c) {
        b_pos = beta(du, degrees.item[i]);
        w_pos += objective.lambda * b_pos;
      }
      double sp = detail::accumulate_term(eu, model.item(i), user_grad, [&] { return g.item_row(i); }, 1.0, w_pos, norm);
      part.o += sp;
      part.c += b_pos * sp;

      for (Index j : batch.negatives_of(p)) {
        double w_neg = 1.0;
        double b_neg = 0.0;
        if (use_c) {
          b_neg = beta(du, degrees.item[j]);
          w_neg += objective.lambda * b_neg;
        }
        double sn = detail::accumulate_term(eu, model.item(j), user_grad, [&] { return g.item_row(j); }, -1.0, w_neg, norm);
        part.o += sn;
        part.c += b_neg * sn;
      }

      if (use_i) {
        for (const auto& nb : batch.item_neighbors_of(i)) {
          double wt = objective.gamma * nb.weight;
          auto other = [&] { return g.item_row(nb.index); };
          double s = objective.item_loss == ItemLoss::user_item
                         ? detail::accumulate_term(eu, model.item(nb.index), user_grad, other, 1.0, wt, norm)
                         : detail::accumulate_term(model.item(i), model.item(nb.index), [&] { return g.item_row(i); },
                                                   other, 1.0, wt, norm);
          part.i += nb.weight * s;
        }
      }
      if (use_u) {
        for (const auto& nb : batch.user_neighbors_of(u)) {
          double wt = objective.user_weight * nb.weight;
          double s = detail::accumulate_term(model.user(nb.index), model.item(i), [&] { return g.user_row(nb.index); },
                                             [&] { return g.item_row(i); }, 1.0, wt, norm);
          part.u += nb.weight * s;
        }
      }
    }
  });

  SparseGradient& out = workspace.result();
  for (std::size_t w = 1; w < partial.size(); ++w) out.add(workspace.buffer(w));
  LossBreakdown total;
  for (const auto& part : partial) total.add(part);

  if (reg != 0.0) {
    for (Index u : out.touched_users()) {
      auto e = model.user(u);
      auto gr = out.user_row(u);
      for (std::size_t k = 0; k < e.size(); ++k) {
        gr[k] += 2.0 * reg * e[k];
        total.penalty += reg * e[k] * e[k];
      }
    }
    for (Index i : out.touched_items()) {
      auto e = model.item(i);
      auto gr = out.item_row(i);
      for (std::size_t k = 0; k < e.size(); ++k) {
        gr[k] += 2.0 * reg * e[k];
        total.penalty += reg * e[k] * e[k];
      }
    }
  }
  total.total = total.o;
  if (use_c) total.total += objective.lambda * total.c;
  if (use_i) total.total += objective.gamma * total.i;
  if (use_u) total.total += objective.user_weight * total.u;
  return total;
}

// Checkpoint layout: "UGCNCKPT", u32 version, u64 users, u64 items, u64 dim,
// then the user and item matrices row-major as little-endian f64.
namespace detail {
inline constexpr char kCheckpointMagic[8] = {'U', 'G', 'C', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace detail

inline void save_checkpoint(std::ostream& out, const EmbeddingModel& model) {
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_le<std::uint32_t>(out, detail::kCheckpointVersion);
  detail::write_le<std::uint64_t>(out, model.num_users());
  detail::write_le<std::uint64_t>(out, model.num_items());
  detail::write_le<std::uint64_t>(out, model.dim());
  for (double v : model.user_matrix()) detail::write_le<double>(out, v);
  for (double v : model.item_matrix()) detail::write_le<double>(out, v);
}

inline void save_checkpoint(const std::filesystem::path& path, const EmbeddingModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  save_checkpoint(out, model);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

inline EmbeddingModel load_checkpoint(std::istream& in) {
  char magic[sizeof(detail::kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("not an embedding checkpoint");
  }
  if (detail::read_le<std::uint32_t>(in) != detail::kCheckpointVersion) throw DataError("checkpoint version mismatch");
  auto users = detail::read_le<std::uint64_t>(in);
  auto items = detail::read_le<std::uint64_t>(in);
  auto dim = detail::read_le<std::uint64_t>(in);
  if (users > UINT32_MAX || items > UINT32_MAX || dim == 0) throw DataError("corrupt checkpoint header");
  EmbeddingModel model(static_cast<Index>(users), static_cast<Index>(items), dim);
  for (double& v : model.user_matrix()) v = detail::read_le<double>(in);
  for (double& v : model.item_matrix()) v = detail::read_le<double>(in);
  return model;
}

inline EmbeddingModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace ultragcn
