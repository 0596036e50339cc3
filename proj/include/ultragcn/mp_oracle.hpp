#pragma once

// Dense LightGCN-style message passing for tiny graphs. Checks the
// closed-form limit of repeated propagation and the one-layer expansion of
// the user-item logit into alpha-weighted neighbor dot products. Not used
// by training.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ultragcn/errors.hpp"

namespace ultragcn::oracle {

inline constexpr std::size_t kMaxNodes = 1000;

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

// Simple undirected graph over n nodes stored as a dense 0/1 matrix with an
// empty diagonal. Self-loops are added by propagation_matrix, never stored.
// For bipartite graphs nodes [0, num_users) are users and the rest items.
struct DenseGraph {
  std::size_t n = 0;
  std::size_t m = 0;
  Eigen::MatrixXd adjacency;
  std::vector<std::size_t> degree;
  std::size_t num_users = 0;  // 0 for a general graph

  static DenseGraph from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    if (n == 0) throw DomainError("dense graph needs at least one node");
    if (n > kMaxNodes) throw DomainError("dense oracle is limited to " + std::to_string(kMaxNodes) + " nodes");
    DenseGraph g;
    g.n = n;
    g.adjacency = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (auto [a, b] : edges) {
      if (a >= n || b >= n) throw DomainError("edge endpoint out of range");
      if (a == b) throw DomainError("self-loops are implicit; do not list them");
      g.adjacency(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = 1.0;
      g.adjacency(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = 1.0;
    }
    g.degree.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      g.degree[v] = static_cast<std::size_t>(g.adjacency.row(static_cast<Eigen::Index>(v)).sum());
      g.m += g.degree[v];
    }
    g.m /= 2;
    return g;
  }

  // Users occupy nodes [0, users), item k becomes node users + k.
  static DenseGraph bipartite(std::size_t users, std::size_t items,
                              const std::vector<std::pair<std::size_t, std::size_t>>& user_item) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    edges.reserve(user_item.size());
    for (auto [u, i] : user_item) {
      if (u >= users || i >= items) throw DomainError("bipartite edge out of range");
      edges.emplace_back(u, users + i);
    }
    DenseGraph g = from_edges(users + items, edges);
    g.num_users = users;
    return g;
  }

  bool has_edge(std::size_t a, std::size_t b) const {
    return adjacency(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) != 0.0;
  }

  std::vector<std::size_t> neighbors(std::size_t v) const {
    std::vector<std::size_t> out;
    for (std::size_t w = 0; w < n; ++w)
      if (has_edge(v, w)) out.push_back(w);
    return out;
  }

  std::vector<std::vector<std::size_t>> components() const {
    DisjointSets sets(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (has_edge(a, b)) sets.unite(a, b);
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> slot(n, n);
    for (std::size_t v = 0; v < n; ++v) {
      std::size_t root = sets.find(v);
      if (slot[root] == n) {
        slot[root] = groups.size();
        groups.emplace_back();
      }
      groups[slot[root]].push_back(v);
    }
    return groups;
  }

  bool connected() const { return components().size() == 1; }

  // Subgraph on `nodes` (relabelled 0..k-1 in the given order).
  DenseGraph induced(const std::vector<std::size_t>& nodes) const {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t a = 0; a < nodes.size(); ++a)
      for (std::size_t b = a + 1; b < nodes.size(); ++b)
        if (has_edge(nodes[a], nodes[b])) edges.emplace_back(a, b);
    return from_edges(nodes.size(), edges);
  }
};

// P_ij = 1 / sqrt((d_i + 1)(d_j + 1)) on edges and the diagonal.
inline Eigen::MatrixXd propagation_matrix(const DenseGraph& g) {
  auto n = static_cast<Eigen::Index>(g.n);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b || g.adjacency(a, b) != 0.0) {
        P(a, b) = 1.0 / std::sqrt(static_cast<double>(g.degree[static_cast<std::size_t>(a)] + 1) *
                                  static_cast<double>(g.degree[static_cast<std::size_t>(b)] + 1));
      }
    }
  }
  return P;
}

// L_ij = sqrt((d_i + 1)(d_j + 1)) / (2m + n). Connected graphs only.
inline Eigen::MatrixXd limit_matrix(const DenseGraph& g) {
  if (!g.connected()) throw DomainError("limit_matrix: graph is disconnected; check components separately");
  auto n = static_cast<Eigen::Index>(g.n);
  double denom = static_cast<double>(2 * g.m + g.n);
  Eigen::MatrixXd L(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      L(a, b) = std::sqrt(static_cast<double>(g.degree[static_cast<std::size_t>(a)] + 1) *
                          static_cast<double>(g.degree[static_cast<std::size_t>(b)] + 1)) /
                denom;
  return L;
}

inline Eigen::MatrixXd power_iterate(const Eigen::MatrixXd& P, std::size_t layers) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(P.rows(), P.cols());
  for (std::size_t l = 0; l < layers; ++l) R = (R * P).eval();
  return R;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

struct ConvergenceResult {
  bool converged = false;
  std::size_t layers = 0;  // multiplications performed
  double residual = 0.0;   // max-abs distance of P^layers to the limit
};

// Multiplies by P until ||P^l - L||_max <= tolerance or max_layers is hit.
inline ConvergenceResult converge_to_limit(const DenseGraph& g, double tolerance = 1e-6,
                                           std::size_t max_layers = 10000) {
  Eigen::MatrixXd P = propagation_matrix(g);
  Eigen::MatrixXd L = limit_matrix(g);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(P.rows(), P.cols());
  ConvergenceResult result;
  result.residual = max_abs_diff(power, L);
  while (result.residual > tolerance && result.layers < max_layers) {
    power = (power * P).eval();
    ++result.layers;
    result.residual = max_abs_diff(power, L);
  }
  result.converged = result.residual <= tolerance;
  return result;
}

// |e_u' . e_i' - (four alpha-weighted sums)| for one layer of propagation,
// where e' = P E. The left side goes through the matrix product, the right
// side through neighbor lists and the alpha coefficients.
inline double dot_decomposition_residual(const DenseGraph& g, const Eigen::MatrixXd& E, std::size_t u,
                                         std::size_t i) {
  if (static_cast<std::size_t>(E.rows()) != g.n) throw DomainError("embedding rows must match node count");
  if (u >= g.n || i >= g.n) throw DomainError("node out of range");
  if (g.num_users != 0 && (u >= g.num_users || i < g.num_users)) {
    throw DomainError("expected a user node and an item node");
  }
  Eigen::MatrixXd propagated = propagation_matrix(g) * E;
  auto ru = static_cast<Eigen::Index>(u);
  auto ri = static_cast<Eigen::Index>(i);
  double lhs = propagated.row(ru).dot(propagated.row(ri));

  auto dp1 = [&](std::size_t v) { return static_cast<double>(g.degree[v] + 1); };
  auto row = [&](std::size_t v) { return E.row(static_cast<Eigen::Index>(v)); };
  const double du = dp1(u), di = dp1(i);
  auto Nu = g.neighbors(u);
  auto Ni = g.neighbors(i);

  double rhs = 1.0 / (du * di) * row(u).dot(row(i));
  for (std::size_t k : Nu) rhs += 1.0 / (std::sqrt(du) * std::sqrt(dp1(k)) * di) * row(i).dot(row(k));
  for (std::size_t v : Ni) rhs += 1.0 / (std::sqrt(dp1(v)) * std::sqrt(di) * du) * row(u).dot(row(v));
  for (std::size_t k : Nu)
    for (std::size_t v : Ni)
      rhs += 1.0 / (std::sqrt(du) * std::sqrt(dp1(k)) * std::sqrt(dp1(v)) * std::sqrt(di)) * row(k).dot(row(v));
  return std::abs(lhs - rhs);
}

// Random recursive spanning tree on n nodes plus each remaining pair with
// probability `extra`. Always connected.
inline DenseGraph random_connected_graph(std::mt19937_64& rng, std::size_t n, double extra) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::vector<char>> present(n, std::vector<char>(n, 0));
  for (std::size_t v = 1; v < n; ++v) {
    std::size_t parent = std::uniform_int_distribution<std::size_t>(0, v - 1)(rng);
    edges.emplace_back(parent, v);
    present[parent][v] = present[v][parent] = 1;
  }
  std::bernoulli_distribution coin(extra);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (!present[a][b] && coin(rng)) edges.emplace_back(a, b);
  return DenseGraph::from_edges(n, edges);
}

// Each user-item pair present with probability `density`; every user and
// item gets at least one edge.
inline DenseGraph random_bipartite_graph(std::mt19937_64& rng, std::size_t users, std::size_t items,
                                         double density) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<char> item_seen(items, 0);
  std::bernoulli_distribution coin(density);
  for (std::size_t u = 0; u < users; ++u) {
    bool any = false;
    for (std::size_t i = 0; i < items; ++i) {
      if (coin(rng)) {
        edges.emplace_back(u, i);
        item_seen[i] = 1;
        any = true;
      }
    }
    if (!any) {
      std::size_t i = std::uniform_int_distribution<std::size_t>(0, items - 1)(rng);
      edges.emplace_back(u, i);
      item_seen[i] = 1;
    }
  }
  for (std::size_t i = 0; i < items; ++i) {
    if (!item_seen[i]) edges.emplace_back(std::uniform_int_distribution<std::size_t>(0, users - 1)(rng), i);
  }
  return DenseGraph::bipartite(users, items, edges);
}

// Largest residual over every (user, item) node pair.
inline double max_decomposition_residual(const DenseGraph& g, const Eigen::MatrixXd& E) {
  double worst = 0.0;
  for (std::size_t u = 0; u < g.num_users; ++u)
    for (std::size_t i = g.num_users; i < g.n; ++i) worst = std::max(worst, dot_decomposition_residual(g, E, u, i));
  return worst;
}

inline Eigen::MatrixXd random_embeddings(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd E(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < E.rows(); ++r)
    for (Eigen::Index c = 0; c < E.cols(); ++c) E(r, c) = gauss(rng);
  return E;
}

}  // namespace ultragcn::oracle
