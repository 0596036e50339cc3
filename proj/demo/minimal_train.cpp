// Trains UltraGCN on a small synthetic dataset and prints test metrics.
//
//   minimal_train            synthetic clustered data
//   minimal_train TRAIN TEST pair-list files ("user item" per line)

#include <iostream>
#include <random>
#include <set>

#include "ultragcn/ultragcn.hpp"

using namespace ultragcn;

namespace {

// Four taste groups; each user mostly picks items from its own group.
std::pair<InteractionFragment, InteractionFragment> synthetic(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  InteractionFragment train, test;
  const int users = 300, items = 200, groups = 4;
  for (int u = 0; u < users; ++u) {
    std::set<int> chosen;
    while (chosen.size() < 15) {
      int g = unit(rng) < 0.8 ? u % groups : static_cast<int>(unit(rng) * groups);
      chosen.insert(g * (items / groups) + static_cast<int>(unit(rng) * (items / groups)));
    }
    int k = 0;
    for (int i : chosen) (k++ % 5 == 4 ? test : train).pairs.emplace_back(u, i);
  }
  train.normalize();
  test.normalize();
  return {train, test};
}

}  // namespace

int main(int argc, char** argv) {
  try {
    auto [train, test] = argc == 3 ? std::pair{load_pair_list(argv[1]), load_pair_list(argv[2])} : synthetic(7);
    InteractionDataset ds = assemble(train, test);
    std::cout << ds.num_users << " users, " << ds.num_items << " items, " << ds.train_pairs.size() << " train pairs\n";

    TrainConfig config;
    config.dim = 32;
    config.lr = 1e-2;
    config.negatives = 10;
    config.batch_size = 256;
    config.init_std = 1e-2;
    config.max_epochs = 30;
    config.eval_interval = 2;
    config.patience = 3;

    FitResult fit_result = fit(ds, config, [](const nlohmann::json& line) {
      if (line.contains("valid")) std::cout << line.dump() << '\n';
    });
    std::cout << "best epoch " << fit_result.best_epoch << '\n';
    std::cout << evaluate(fit_result.model, ds, {10, 20}).to_table();
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
}
