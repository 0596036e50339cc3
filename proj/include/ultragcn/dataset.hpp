#pragma once

// Interaction ingestion: text loaders for adjacency-list and pair-list files,
// dense ID mapping and the train/validation/test split container.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ultragcn/errors.hpp"

namespace ultragcn {

using Index = std::uint32_t;
using ExternalId = std::int64_t;

struct Interaction {
  Index user;
  Index item;

  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

// Interactions of one split as read from disk, keyed by external IDs.
struct InteractionFragment {
  std::vector<std::pair<ExternalId, ExternalId>> pairs;  // sorted, deduplicated
  std::vector<ExternalId> users;                          // every user mentioned, sorted
  std::size_t raw_pairs = 0;                              // before deduplication

  void normalize() {
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (const auto& p : pairs) users.push_back(p.first);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\r')) ++pos;
    std::size_t start = pos;
    while (pos < s.size() && s[pos] != ' ' && s[pos] != '\t' && s[pos] != '\r') ++pos;
    if (pos > start) out.push_back(s.substr(start, pos - start));
  }
  return out;
}

inline ExternalId parse_id(std::string_view token, const std::string& source, std::size_t line) {
  ExternalId value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw ParseError(source, line, "malformed token '" + std::string(token) + "'");
  }
  if (value < 0) throw ParseError(source, line, "negative ID " + std::string(token));
  return value;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

}  // namespace detail

// `user item1 item2 ...` per line. A user with no items is still registered.
inline InteractionFragment load_adjacency_list(std::istream& in, const std::string& source = "<stream>") {
  InteractionFragment frag;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto tokens = detail::split_ws(body);
    ExternalId user = detail::parse_id(tokens[0], source, line_no);
    frag.users.push_back(user);
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      frag.pairs.emplace_back(user, detail::parse_id(tokens[t], source, line_no));
    }
  }
  frag.raw_pairs = frag.pairs.size();
  frag.normalize();
  return frag;
}

inline InteractionFragment load_adjacency_list(const std::string& path) {
  auto in = detail::open_input(path);
  return load_adjacency_list(in, path);
}

// `user item [ignored columns...]` per line.
inline InteractionFragment load_pair_list(std::istream& in, const std::string& source = "<stream>") {
  InteractionFragment frag;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto tokens = detail::split_ws(body);
    if (tokens.size() < 2) throw ParseError(source, line_no, "expected 'user item'");
    frag.pairs.emplace_back(detail::parse_id(tokens[0], source, line_no),
                            detail::parse_id(tokens[1], source, line_no));
  }
  frag.raw_pairs = frag.pairs.size();
  frag.normalize();
  return frag;
}

inline InteractionFragment load_pair_list(const std::string& path) {
  auto in = detail::open_input(path);
  return load_pair_list(in, path);
}

enum class InputFormat { adjacency, pairs };

inline InputFormat parse_input_format(std::string_view name) {
  if (name == "adjacency" || name == "adj") return InputFormat::adjacency;
  if (name == "pairs" || name == "pair") return InputFormat::pairs;
  throw ConfigError("unknown input format '" + std::string(name) + "' (expected adjacency|pairs)");
}

inline InteractionFragment load_fragment(const std::string& path, InputFormat format) {
  return format == InputFormat::adjacency ? load_adjacency_list(path) : load_pair_list(path);
}

struct AssembleOptions {
  double holdout_fraction = 0.05;  // used only when no validation split is given
  std::uint64_t seed = 2021;
};

// Counts of pairs removed while enforcing the split invariants.
struct AssembleWarnings {
  std::size_t test_cold_user = 0;   // test user without train interactions
  std::size_t valid_cold_user = 0;
  std::size_t test_in_train = 0;    // pair also present in train
  std::size_t valid_in_train = 0;

  std::size_t total() const { return test_cold_user + valid_cold_user + test_in_train + valid_in_train; }
};

class InteractionDataset {
 public:
  Index num_users = 0;
  Index num_items = 0;
  std::vector<Interaction> train_pairs;  // sorted
  std::vector<Interaction> valid_pairs;  // sorted
  std::vector<Interaction> test_pairs;   // sorted
  std::vector<ExternalId> user_ids;      // dense -> external, ascending
  std::vector<ExternalId> item_ids;
  AssembleWarnings warnings;
  bool holdout_validation = false;

  std::size_t num_interactions() const { return train_pairs.size() + valid_pairs.size() + test_pairs.size(); }

  double density() const {
    if (num_users == 0 || num_items == 0) return 0.0;
    return static_cast<double>(num_interactions()) /
           (static_cast<double>(num_users) * static_cast<double>(num_items));
  }

  std::optional<Index> user_index(ExternalId id) const { return lookup(user_ids, id); }
  std::optional<Index> item_index(ExternalId id) const { return lookup(item_ids, id); }

  // FNV-1a over the train structure; keys on-disk caches.
  std::uint64_t train_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffu;
        h *= 1099511628211ULL;
      }
    };
    mix(num_users);
    mix(num_items);
    mix(train_pairs.size());
    for (const auto& p : train_pairs) mix((std::uint64_t{p.user} << 32) | p.item);
    return h;
  }

 private:
  static std::optional<Index> lookup(const std::vector<ExternalId>& ids, ExternalId id) {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) return std::nullopt;
    return static_cast<Index>(it - ids.begin());
  }
};

namespace detail {

inline std::vector<ExternalId> sorted_union(std::vector<ExternalId> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline Index dense_index(const std::vector<ExternalId>& ids, ExternalId id) {
  return static_cast<Index>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
}

}  // namespace detail

// Builds dense, ascending-ID maps over every ID mentioned in any split and
// enforces: no duplicates within a split, train disjoint from valid/test, and
// every evaluated user present in train. When `valid` is absent a seeded
// fraction of train is held out, never taking a user's last train pair.
inline InteractionDataset assemble(const InteractionFragment& train, const std::optional<InteractionFragment>& valid,
                                   const InteractionFragment& test, const AssembleOptions& options = {}) {
  if (options.holdout_fraction < 0.0 || options.holdout_fraction >= 1.0) {
    throw ConfigError("holdout fraction must lie in [0, 1)");
  }
  InteractionDataset ds;

  std::vector<ExternalId> users, items;
  auto collect = [&](const InteractionFragment& f) {
    users.insert(users.end(), f.users.begin(), f.users.end());
    for (const auto& [u, i] : f.pairs) {
      users.push_back(u);
      items.push_back(i);
    }
  };
  collect(train);
  if (valid) collect(*valid);
  collect(test);
  ds.user_ids = detail::sorted_union(std::move(users));
  ds.item_ids = detail::sorted_union(std::move(items));
  if (ds.user_ids.size() > UINT32_MAX || ds.item_ids.size() > UINT32_MAX) throw DataError("ID space exceeds 2^32");
  ds.num_users = static_cast<Index>(ds.user_ids.size());
  ds.num_items = static_cast<Index>(ds.item_ids.size());

  auto to_dense = [&](const InteractionFragment& f) {
    std::vector<Interaction> out;
    out.reserve(f.pairs.size());
    for (const auto& [u, i] : f.pairs) {
      out.push_back({detail::dense_index(ds.user_ids, u), detail::dense_index(ds.item_ids, i)});
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  ds.train_pairs = to_dense(train);
  const std::vector<Interaction> train_input = ds.train_pairs;

  std::vector<std::uint32_t> train_degree(ds.num_users, 0);
  for (const auto& p : ds.train_pairs) ++train_degree[p.user];

  if (valid) {
    ds.valid_pairs = to_dense(*valid);
  } else if (options.holdout_fraction > 0.0 && !ds.train_pairs.empty()) {
    ds.holdout_validation = true;
    auto target = static_cast<std::size_t>(options.holdout_fraction * static_cast<double>(ds.train_pairs.size()));
    std::vector<std::size_t> order(ds.train_pairs.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> held(ds.train_pairs.size(), 0);
    std::size_t taken = 0;
    for (std::size_t k = 0; k < order.size() && taken < target; ++k) {
      const auto& p = ds.train_pairs[order[k]];
      if (train_degree[p.user] > 1) {
        --train_degree[p.user];
        held[order[k]] = 1;
        ++taken;
      }
    }
    std::vector<Interaction> kept;
    kept.reserve(ds.train_pairs.size() - taken);
    for (std::size_t k = 0; k < ds.train_pairs.size(); ++k) {
      (held[k] ? ds.valid_pairs : kept).push_back(ds.train_pairs[k]);
    }
    ds.train_pairs = std::move(kept);
  }

  // held-out pairs still count as train input when filtering test
  auto in_train = [&](const Interaction& p) {
    return std::binary_search(train_input.begin(), train_input.end(), p);
  };
  auto filter = [&](std::vector<Interaction>& split, std::size_t& overlap, std::size_t& cold) {
    std::vector<Interaction> kept;
    kept.reserve(split.size());
    for (const auto& p : split) {
      if (in_train(p)) {
        ++overlap;
      } else if (train_degree[p.user] == 0) {
        ++cold;
      } else {
        kept.push_back(p);
      }
    }
    split = std::move(kept);
  };
  if (!ds.holdout_validation) filter(ds.valid_pairs, ds.warnings.valid_in_train, ds.warnings.valid_cold_user);
  ds.test_pairs = to_dense(test);
  filter(ds.test_pairs, ds.warnings.test_in_train, ds.warnings.test_cold_user);
  return ds;
}

inline InteractionDataset assemble(const InteractionFragment& train, const InteractionFragment& test,
                                   const AssembleOptions& options = {}) {
  return assemble(train, std::nullopt, test, options);
}

enum class Split { train, validation, test };

inline const std::vector<Interaction>& split_pairs(const InteractionDataset& ds, Split split) {
  switch (split) {
    case Split::train: return ds.train_pairs;
    case Split::validation: return ds.valid_pairs;
    case Split::test: break;
  }
  return ds.test_pairs;
}

// Re-emits a split in pair-list format using external IDs.
inline void write_pair_list(std::ostream& out, const InteractionDataset& ds, Split split) {
  for (const auto& p : split_pairs(ds, split)) out << ds.user_ids[p.user] << ' ' << ds.item_ids[p.item] << '\n';
}

inline void write_pair_list(const std::string& path, const InteractionDataset& ds, Split split) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_pair_list(out, ds, split);
}

inline nlohmann::json dataset_manifest(const InteractionDataset& ds) {
  return {
      {"users", ds.num_users},
      {"items", ds.num_items},
      {"interactions", ds.num_interactions()},
      {"train", ds.train_pairs.size()},
      {"validation", ds.valid_pairs.size()},
      {"test", ds.test_pairs.size()},
      {"density", ds.density()},
      {"holdout_validation", ds.holdout_validation},
      {"train_hash", ds.train_hash()},
      {"dropped",
       {{"test_cold_user", ds.warnings.test_cold_user},
        {"valid_cold_user", ds.warnings.valid_cold_user},
        {"test_in_train", ds.warnings.test_in_train},
        {"valid_in_train", ds.warnings.valid_in_train}}},
  };
}

}  // namespace ultragcn
