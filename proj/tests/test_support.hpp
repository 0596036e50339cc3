#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ultragcn/dataset.hpp"
#include "ultragcn/graph.hpp"
#include "ultragcn/model.hpp"

namespace ultragcn::test_util {

inline InteractionFragment fragment_from(const std::string& text, bool adjacency = false) {
  std::istringstream in(text);
  return adjacency ? load_adjacency_list(in) : load_pair_list(in);
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ultragcn-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Users and items fall into `groups` taste clusters; a user draws most items
// from its own cluster with popularity skew inside the cluster.
inline std::vector<std::pair<ExternalId, ExternalId>> clustered_interactions(std::mt19937_64& rng, int users,
                                                                             int items, int per_user, int groups,
                                                                             double in_group = 0.85) {
  std::vector<std::pair<ExternalId, ExternalId>> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int per_group = items / groups;
  for (int u = 0; u < users; ++u) {
    int g = u % groups;
    std::set<int> chosen;
    while (static_cast<int>(chosen.size()) < per_user) {
      int item;
      if (unit(rng) < in_group) {
        double r = unit(rng);
        item = g * per_group + static_cast<int>(r * r * per_group);
      } else {
        item = static_cast<int>(unit(rng) * items);
      }
      chosen.insert(std::min(item, items - 1));
    }
    for (int i : chosen) out.emplace_back(u, i);
  }
  return out;
}

// Per-user random split of the interaction list into train/test fragments.
inline std::pair<InteractionFragment, InteractionFragment> split_fragments(
    std::mt19937_64& rng, const std::vector<std::pair<ExternalId, ExternalId>>& pairs, double test_fraction) {
  InteractionFragment train, test;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ExternalId last_user = -1;
  for (const auto& p : pairs) {
    bool first = p.first != last_user;
    last_user = p.first;
    (!first && unit(rng) < test_fraction ? test : train).pairs.push_back(p);
  }
  train.raw_pairs = train.pairs.size();
  test.raw_pairs = test.pairs.size();
  train.normalize();
  test.normalize();
  return {train, test};
}

inline void fill_gaussian(EmbeddingModel& model, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> gauss(0.0, stddev);
  for (double& v : model.user_matrix()) v = gauss(rng);
  for (double& v : model.item_matrix()) v = gauss(rng);
}

}  // namespace ultragcn::test_util
