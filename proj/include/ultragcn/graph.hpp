#pragma once

// Sparse bipartite structure and the precomputed coefficient tables used by
// the constraint losses: degrees, beta, the item co-occurrence graph A^T A,
// omega, and top-K neighbor lists.

#include <algorithm>
#include <bit>
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
#include "ultragcn/parallel.hpp"

namespace ultragcn {

// Compressed rows with sorted column indices.
struct Csr {
  std::vector<std::size_t> offsets{0};
  std::vector<Index> indices;

  std::size_t rows() const { return offsets.size() - 1; }
  std::size_t nnz() const { return indices.size(); }
  std::span<const Index> row(std::size_t r) const {
    return {indices.data() + offsets[r], offsets[r + 1] - offsets[r]};
  }
  bool contains(std::size_t r, Index c) const {
    auto row_span = row(r);
    return std::binary_search(row_span.begin(), row_span.end(), c);
  }
};

namespace detail {

// Counting-sort construction; `pairs` need not be sorted.
template <typename RowOf, typename ColOf>
Csr build_csr(std::size_t rows, std::span<const Interaction> pairs, RowOf row_of, ColOf col_of) {
  Csr csr;
  csr.offsets.assign(rows + 1, 0);
  for (const auto& p : pairs) ++csr.offsets[row_of(p) + 1];
  for (std::size_t r = 0; r < rows; ++r) csr.offsets[r + 1] += csr.offsets[r];
  csr.indices.resize(pairs.size());
  std::vector<std::size_t> cursor(csr.offsets.begin(), csr.offsets.end() - 1);
  for (const auto& p : pairs) csr.indices[cursor[row_of(p)]++] = col_of(p);
  for (std::size_t r = 0; r < rows; ++r) {
    std::sort(csr.indices.begin() + static_cast<std::ptrdiff_t>(csr.offsets[r]),
              csr.indices.begin() + static_cast<std::ptrdiff_t>(csr.offsets[r + 1]));
  }
  return csr;
}

}  // namespace detail

class BipartiteGraph {
 public:
  Csr user_items;
  Csr item_users;
  std::vector<std::uint32_t> user_degree;
  std::vector<std::uint32_t> item_degree;

  Index num_users() const { return static_cast<Index>(user_degree.size()); }
  Index num_items() const { return static_cast<Index>(item_degree.size()); }
  std::size_t num_edges() const { return user_items.nnz(); }

  bool has_edge(Index u, Index i) const { return user_items.contains(u, i); }

  // Same graph with the roles of users and items swapped.
  BipartiteGraph transposed() const {
    BipartiteGraph t;
    t.user_items = item_users;
    t.item_users = user_items;
    t.user_degree = item_degree;
    t.item_degree = user_degree;
    return t;
  }
};

inline BipartiteGraph build_graph(Index num_users, Index num_items, std::span<const Interaction> pairs) {
  BipartiteGraph g;
  for (const auto& p : pairs) {
    if (p.user >= num_users || p.item >= num_items) throw DataError("interaction index out of range");
  }
  g.user_items = detail::build_csr(num_users, pairs, [](const Interaction& p) { return p.user; },
                                   [](const Interaction& p) { return p.item; });
  g.item_users = detail::build_csr(num_items, pairs, [](const Interaction& p) { return p.item; },
                                   [](const Interaction& p) { return p.user; });
  g.user_degree.resize(num_users);
  g.item_degree.resize(num_items);
  for (Index u = 0; u < num_users; ++u) g.user_degree[u] = static_cast<std::uint32_t>(g.user_items.row(u).size());
  for (Index i = 0; i < num_items; ++i) g.item_degree[i] = static_cast<std::uint32_t>(g.item_users.row(i).size());
  return g;
}

// Only train pairs enter the graph.
inline BipartiteGraph build_graph(const InteractionDataset& ds) {
  return build_graph(ds.num_users, ds.num_items, ds.train_pairs);
}

// Constraint coefficient (1/d_u) * sqrt((d_u + 1) / (d_i + 1)). d_i = 0 is
// accepted so that negatives never seen in train still get a weight.
inline double beta(std::uint64_t user_degree, std::uint64_t item_degree) {
  if (user_degree == 0) throw DomainError("beta: user degree must be >= 1");
  double du = static_cast<double>(user_degree);
  double di = static_cast<double>(item_degree);
  return (1.0 / du) * std::sqrt((du + 1.0) / (di + 1.0));
}

// Item-item co-occurrence counts G = A^T A in CSR form, diagonal included,
// plus the row sums g_i. Row sums are exact even for capped rows.
struct CooccurrenceGraph {
  std::vector<std::size_t> offsets{0};
  std::vector<Index> columns;
  std::vector<std::uint32_t> counts;
  std::vector<std::uint64_t> degree;
  std::size_t truncated_rows = 0;

  Index size() const { return static_cast<Index>(degree.size()); }
  std::size_t nnz() const { return columns.size(); }

  std::span<const Index> row_columns(Index i) const {
    return {columns.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
  std::span<const std::uint32_t> row_counts(Index i) const {
    return {counts.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }

  std::uint32_t count(Index i, Index j) const {
    auto cols = row_columns(i);
    auto it = std::lower_bound(cols.begin(), cols.end(), j);
    if (it == cols.end() || *it != j) return 0;
    return counts[offsets[i] + static_cast<std::size_t>(it - cols.begin())];
  }
};

struct CooccurrenceOptions {
  std::size_t row_cap = 50000;  // max off-diagonal entries kept per row
  unsigned threads = 1;
};

namespace detail {

inline double omega_value(std::uint64_t g_ij, std::uint64_t g_i, std::uint64_t g_ii, std::uint64_t g_j) {
  std::uint64_t denom = g_i - g_ii;
  if (denom == 0 || g_ij == 0) return 0.0;
  return static_cast<double>(g_ij) / static_cast<double>(denom) *
         std::sqrt(static_cast<double>(g_i) / static_cast<double>(g_j));
}

}  // namespace detail

// Joins the "row" side through shared "column" nodes: for items pass the
// graph itself, for the user-user graph B = A A^T pass graph.transposed().
inline CooccurrenceGraph build_cooccurrence(const BipartiteGraph& graph, const CooccurrenceOptions& options = {}) {
  const Index n = graph.num_items();
  CooccurrenceGraph G;
  G.degree.assign(n, 0);
  // g_i = sum_k G_ik = sum over users of i of d_u
  for (Index i = 0; i < n; ++i) {
    std::uint64_t s = 0;
    for (Index u : graph.item_users.row(i)) s += graph.user_degree[u];
    G.degree[i] = s;
  }

  struct Row {
    std::vector<Index> cols;
    std::vector<std::uint32_t> vals;
    bool truncated = false;
  };
  std::vector<Row> rows(n);
  unsigned threads = std::max(1u, options.threads);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<std::uint32_t> acc(n, 0);
    std::vector<Index> touched;
    for (std::size_t i = begin; i < end; ++i) {
      touched.clear();
      for (Index u : graph.item_users.row(i)) {
        for (Index k : graph.user_items.row(u)) {
          if (acc[k]++ == 0) touched.push_back(k);
        }
      }
      Row& row = rows[i];
      std::sort(touched.begin(), touched.end());
      std::size_t off_diag = touched.size() - (acc[i] > 0 ? 1 : 0);
      if (off_diag > options.row_cap) {
        // keep the diagonal plus the row_cap entries with the largest omega
        std::uint64_t gi = G.degree[i];
        std::uint64_t gii = acc[i];
        std::vector<Index> kept;
        kept.reserve(off_diag);
        for (Index k : touched)
          if (k != i) kept.push_back(k);
        auto weight = [&](Index k) { return detail::omega_value(acc[k], gi, gii, G.degree[k]); };
        std::nth_element(kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(options.row_cap), kept.end(),
                         [&](Index a, Index b) {
                           double wa = weight(a), wb = weight(b);
                           return wa != wb ? wa > wb : a < b;
                         });
        kept.resize(options.row_cap);
        if (gii > 0) kept.push_back(static_cast<Index>(i));
        std::sort(kept.begin(), kept.end());
        row.cols = std::move(kept);
        row.truncated = true;
      } else {
        row.cols = touched;
      }
      row.vals.reserve(row.cols.size());
      for (Index k : row.cols) row.vals.push_back(acc[k]);
      for (Index k : touched) acc[k] = 0;
    }
  });

  for (Index i = 0; i < n; ++i) {
    G.offsets.push_back(G.offsets.back() + rows[i].cols.size());
    G.columns.insert(G.columns.end(), rows[i].cols.begin(), rows[i].cols.end());
    G.counts.insert(G.counts.end(), rows[i].vals.begin(), rows[i].vals.end());
    if (rows[i].truncated) ++G.truncated_rows;
  }
  return G;
}

inline CooccurrenceGraph build_user_cooccurrence(const BipartiteGraph& graph,
                                                 const CooccurrenceOptions& options = {}) {
  return build_cooccurrence(graph.transposed(), options);
}

// omega_{i,j} = G_ij / (g_i - G_ii) * sqrt(g_i / g_j); 0 when item i
// co-occurs with nothing but itself.
inline double omega(const CooccurrenceGraph& G, Index i, Index j) {
  if (i >= G.size() || j >= G.size()) throw DomainError("omega: index out of range");
  if (i == j) throw DomainError("omega: requires i != j");
  if (G.degree[j] == 0) throw DomainError("omega: item " + std::to_string(j) + " has no train interactions");
  return detail::omega_value(G.count(i, j), G.degree[i], G.count(i, i), G.degree[j]);
}

struct Neighbor {
  Index index;
  double weight;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Per-node top-K neighbor lists sorted by descending weight, ties to the
// smaller index.
class NeighborIndex {
 public:
  NeighborIndex() = default;

  static NeighborIndex empty(Index nodes) {
    NeighborIndex idx;
    idx.offsets_.assign(std::size_t{nodes} + 1, 0);
    return idx;
  }

  Index size() const { return static_cast<Index>(offsets_.size() - 1); }
  std::size_t k() const { return k_; }
  std::size_t total_entries() const { return entries_.size(); }

  std::span<const Neighbor> neighbors(Index i) const {
    return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;

 private:
  friend NeighborIndex build_neighbor_index(const CooccurrenceGraph&, std::size_t, unsigned);
  friend void save_neighbor_index(std::ostream&, const NeighborIndex&, std::uint64_t);
  friend NeighborIndex load_neighbor_index(std::istream&, std::uint64_t, std::size_t);

  std::vector<std::size_t> offsets_{0};
  std::vector<Neighbor> entries_;
  std::size_t k_ = 0;
};

using ItemNeighborIndex = NeighborIndex;

inline NeighborIndex build_neighbor_index(const CooccurrenceGraph& G, std::size_t K, unsigned threads = 1) {
  if (K < 1) throw ConfigError("neighbor count K must be >= 1");
  const Index n = G.size();
  std::vector<std::vector<Neighbor>> lists(n);
  parallel_for(n, std::max(1u, threads), [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t r = begin; r < end; ++r) {
      Index i = static_cast<Index>(r);
      auto cols = G.row_columns(i);
      auto vals = G.row_counts(i);
      std::uint64_t gii = G.count(i, i);
      std::vector<Neighbor> cand;
      for (std::size_t t = 0; t < cols.size(); ++t) {
        if (cols[t] == i) continue;
        double w = detail::omega_value(vals[t], G.degree[i], gii, G.degree[cols[t]]);
        if (w > 0.0) cand.push_back({cols[t], w});
      }
      auto better = [](const Neighbor& a, const Neighbor& b) {
        return a.weight != b.weight ? a.weight > b.weight : a.index < b.index;
      };
      std::size_t keep = std::min(K, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
      cand.resize(keep);
      lists[r] = std::move(cand);
    }
  });
  NeighborIndex idx;
  idx.k_ = K;
  idx.offsets_.reserve(std::size_t{n} + 1);
  for (auto& l : lists) {
    idx.entries_.insert(idx.entries_.end(), l.begin(), l.end());
    idx.offsets_.push_back(idx.entries_.size());
  }
  return idx;
}

// Binary cache: magic, version, key hash, K, node count, offsets, entries.
// All integers and doubles little-endian.
namespace detail {

inline constexpr char kIndexMagic[8] = {'U', 'G', 'C', 'N', 'N', 'B', 'R', 'S'};
inline constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("unexpected end of binary file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline void save_neighbor_index(std::ostream& out, const NeighborIndex& idx, std::uint64_t key) {
  out.write(detail::kIndexMagic, sizeof(detail::kIndexMagic));
  detail::write_le<std::uint32_t>(out, detail::kIndexVersion);
  detail::write_le<std::uint64_t>(out, key);
  detail::write_le<std::uint64_t>(out, idx.k_);
  detail::write_le<std::uint64_t>(out, idx.size());
  for (std::size_t off : idx.offsets_) detail::write_le<std::uint64_t>(out, off);
  for (const auto& e : idx.entries_) {
    detail::write_le<std::uint32_t>(out, e.index);
    detail::write_le<double>(out, e.weight);
  }
}

// Throws DataError if the file is not a cache for (key, K).
inline NeighborIndex load_neighbor_index(std::istream& in, std::uint64_t key, std::size_t K) {
  char magic[sizeof(detail::kIndexMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kIndexMagic, sizeof(magic)) != 0) {
    throw DataError("not a neighbor index cache");
  }
  if (detail::read_le<std::uint32_t>(in) != detail::kIndexVersion) throw DataError("neighbor cache version mismatch");
  if (detail::read_le<std::uint64_t>(in) != key) throw DataError("neighbor cache key mismatch");
  if (detail::read_le<std::uint64_t>(in) != K) throw DataError("neighbor cache K mismatch");
  auto n = detail::read_le<std::uint64_t>(in);
  NeighborIndex idx;
  idx.k_ = K;
  idx.offsets_.resize(n + 1);
  for (auto& off : idx.offsets_) off = detail::read_le<std::uint64_t>(in);
  if (idx.offsets_.front() != 0 || !std::is_sorted(idx.offsets_.begin(), idx.offsets_.end())) {
    throw DataError("corrupt neighbor cache offsets");
  }
  idx.entries_.resize(idx.offsets_.back());
  for (auto& e : idx.entries_) {
    e.index = detail::read_le<std::uint32_t>(in);
    e.weight = detail::read_le<double>(in);
  }
  return idx;
}

inline std::filesystem::path neighbor_cache_path(const std::filesystem::path& dir, std::string_view kind,
                                                 std::uint64_t key, std::size_t K) {
  return dir / (std::string(kind) + "-" + std::to_string(key) + "-k" + std::to_string(K) + ".nbr");
}

// Loads the cached index when present and valid, otherwise builds it and
// writes the cache. An empty `cache_dir` disables caching.
inline NeighborIndex cached_neighbor_index(const std::filesystem::path& cache_dir, std::string_view kind,
                                           std::uint64_t key, std::size_t K, auto&& build) {
  if (cache_dir.empty()) return build();
  auto path = neighbor_cache_path(cache_dir, kind, key, K);
  if (std::ifstream in(path, std::ios::binary); in) {
    try {
      return load_neighbor_index(in, key, K);
    } catch (const DataError&) {
      // stale or corrupt: rebuild below
    }
  }
  NeighborIndex idx = build();
  std::filesystem::create_directories(cache_dir);
  std::ofstream out(path, std::ios::binary);
  if (out) save_neighbor_index(out, idx, key);
  return idx;
}

}  // namespace ultragcn
