#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "test_support.hpp"
#include "ultragcn/dataset.hpp"

using namespace ultragcn;
using ultragcn::test_util::fragment_from;

TEST(LoadAdjacencyList, ReadsUserItemsLine) {
  auto f = fragment_from("0 1 2\n", true);
  std::vector<std::pair<ExternalId, ExternalId>> expected{{0, 1}, {0, 2}};
  EXPECT_EQ(f.pairs, expected);
}

TEST(LoadAdjacencyList, UserWithoutItemsIsRegistered) {
  auto f = fragment_from("5\n", true);
  EXPECT_TRUE(f.pairs.empty());
  ASSERT_EQ(f.users.size(), 1u);
  EXPECT_EQ(f.users[0], 5);
}

TEST(LoadAdjacencyList, DuplicateLinesCollapse) {
  auto f = fragment_from("0 1\n0 1\n", true);
  ASSERT_EQ(f.pairs.size(), 1u);
  EXPECT_EQ(f.pairs[0], (std::pair<ExternalId, ExternalId>{0, 1}));
  EXPECT_EQ(f.raw_pairs, 2u);
}

TEST(LoadAdjacencyList, CommentsAndBlankLinesIgnored) {
  auto f = fragment_from("# header\n\n3 4\n   \n", true);
  EXPECT_EQ(f.pairs.size(), 1u);
}

TEST(LoadAdjacencyList, MalformedTokenNamesLine) {
  try {
    fragment_from("0 1\n1 x2\n", true);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(LoadAdjacencyList, NegativeIdRejected) {
  EXPECT_THROW(fragment_from("0 -1\n", true), ParseError);
  EXPECT_THROW(fragment_from("-3 1\n", true), ParseError);
}

TEST(LoadPairList, TrailingColumnsIgnored) {
  auto f = fragment_from("1 2 4.5 881250949\n1 3\n");
  std::vector<std::pair<ExternalId, ExternalId>> expected{{1, 2}, {1, 3}};
  EXPECT_EQ(f.pairs, expected);
}

TEST(LoadPairList, SingleColumnIsAnError) {
  EXPECT_THROW(fragment_from("1 2\n7\n"), ParseError);
}

TEST(LoadPairList, MissingFileIsDataError) { EXPECT_THROW(load_pair_list("/nonexistent/x.txt"), DataError); }

TEST(Assemble, DenseMapsCoverUnionOfSplits) {
  auto train = fragment_from("10 100\n10 101\n20 100\n");
  auto test = fragment_from("20 102\n");
  auto ds = assemble(train, InteractionFragment{}, test);
  EXPECT_EQ(ds.num_users, 2u);
  EXPECT_EQ(ds.num_items, 3u);
  EXPECT_EQ(ds.user_index(20), Index{1});
  EXPECT_EQ(ds.item_index(102), Index{2});
  EXPECT_FALSE(ds.item_index(999).has_value());
  ASSERT_EQ(ds.test_pairs.size(), 1u);
  EXPECT_EQ(ds.test_pairs[0], (Interaction{1, 2}));
}

TEST(Assemble, ColdTestUserDroppedWithWarning) {
  auto train = fragment_from("0 0\n0 1\n");
  auto test = fragment_from("0 2\n9 1\n");
  auto ds = assemble(train, InteractionFragment{}, test);
  EXPECT_EQ(ds.test_pairs.size(), 1u);
  EXPECT_EQ(ds.warnings.test_cold_user, 1u);
  // user 9 stays in the ID space
  EXPECT_TRUE(ds.user_index(9).has_value());
}

TEST(Assemble, TestPairsOverlappingTrainRemoved) {
  auto train = fragment_from("0 0\n0 1\n");
  auto test = fragment_from("0 1\n0 2\n");
  auto ds = assemble(train, InteractionFragment{}, test);
  EXPECT_EQ(ds.test_pairs.size(), 1u);
  EXPECT_EQ(ds.warnings.test_in_train, 1u);
}

TEST(Assemble, HoldoutIsSeededAndKeepsEveryUserInTrain) {
  std::mt19937_64 rng(3);
  auto pairs = ultragcn::test_util::clustered_interactions(rng, 60, 80, 8, 4);
  InteractionFragment train;
  train.pairs = pairs;
  train.normalize();
  auto a = assemble(train, fragment_from(""), {.holdout_fraction = 0.05, .seed = 11});
  auto b = assemble(train, fragment_from(""), {.holdout_fraction = 0.05, .seed = 11});
  auto c = assemble(train, fragment_from(""), {.holdout_fraction = 0.05, .seed = 12});
  EXPECT_TRUE(a.holdout_validation);
  EXPECT_EQ(a.valid_pairs.size(), static_cast<std::size_t>(0.05 * pairs.size()));
  EXPECT_EQ(a.valid_pairs, b.valid_pairs);
  EXPECT_NE(a.valid_pairs, c.valid_pairs);
  std::vector<int> deg(a.num_users, 0);
  for (const auto& p : a.train_pairs) ++deg[p.user];
  for (const auto& p : a.valid_pairs) {
    EXPECT_GT(deg[p.user], 0);
    EXPECT_FALSE(std::binary_search(a.train_pairs.begin(), a.train_pairs.end(), p));
  }
}

TEST(Assemble, HoldoutNeverTakesLastPairOfUser) {
  auto train = fragment_from("0 0\n1 1\n2 2\n3 3\n");
  auto ds = assemble(train, fragment_from(""), {.holdout_fraction = 0.5, .seed = 1});
  EXPECT_TRUE(ds.valid_pairs.empty());
  EXPECT_EQ(ds.train_pairs.size(), 4u);
}

TEST(Assemble, ExplicitValidationDisablesHoldout) {
  auto ds = assemble(fragment_from("0 0\n0 1\n"), fragment_from("0 2\n"), fragment_from("0 3\n"));
  EXPECT_FALSE(ds.holdout_validation);
  EXPECT_EQ(ds.valid_pairs.size(), 1u);
  EXPECT_EQ(ds.train_pairs.size(), 2u);
}

TEST(Assemble, RejectsBadHoldoutFraction) {
  EXPECT_THROW(assemble(fragment_from("0 0\n"), fragment_from(""), {.holdout_fraction = 1.0}), ConfigError);
}

// Property: invariants on random inputs with duplicates and overlaps.
TEST(AssembleProperty, InvariantsHoldOnRandomInputs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<int> uid(0, 30), iid(0, 40);
    std::ostringstream tr, te;
    for (int k = 0; k < 200; ++k) {
      int u = uid(rng), i = iid(rng);
      tr << u * 7 << ' ' << i * 3 << '\n';
    }
    for (int k = 0; k < 60; ++k) te << uid(rng) * 7 << ' ' << iid(rng) * 3 << '\n';
    auto train = fragment_from(tr.str());
    auto test = fragment_from(te.str());
    auto ds = assemble(train, test, {.holdout_fraction = 0.1, .seed = static_cast<std::uint64_t>(trial)});

    std::set<Interaction> tr_set(ds.train_pairs.begin(), ds.train_pairs.end());
    EXPECT_EQ(tr_set.size(), ds.train_pairs.size());
    std::vector<int> deg(ds.num_users, 0);
    for (const auto& p : ds.train_pairs) {
      EXPECT_LT(p.user, ds.num_users);
      EXPECT_LT(p.item, ds.num_items);
      ++deg[p.user];
    }
    for (const auto* split : {&ds.valid_pairs, &ds.test_pairs}) {
      std::set<Interaction> s(split->begin(), split->end());
      EXPECT_EQ(s.size(), split->size());
      for (const auto& p : *split) {
        EXPECT_EQ(tr_set.count(p), 0u);
        EXPECT_GT(deg[p.user], 0);
      }
    }
    // counts: train + valid + test + dropped == deduplicated union
    std::set<std::pair<ExternalId, ExternalId>> uni(train.pairs.begin(), train.pairs.end());
    std::size_t test_only = 0;
    for (const auto& p : test.pairs) test_only += uni.insert(p).second ? 1 : 0;
    EXPECT_EQ(ds.num_interactions() + ds.warnings.test_cold_user + ds.warnings.valid_cold_user, uni.size());
    EXPECT_EQ(ds.warnings.test_in_train, test.pairs.size() - test_only);
  }
}

TEST(AssembleProperty, PairCountEqualsDeduplicatedInput) {
  auto train = fragment_from("0 0\n0 0\n0 1\n1 1\n1 2\n1 2\n");
  auto test = fragment_from("0 2\n1 0\n1 0\n");
  auto ds = assemble(train, test);
  EXPECT_EQ(ds.num_interactions(), 6u);
}

TEST(RoundTrip, PairFormatReloadsToSameIndexSets) {
  std::mt19937_64 rng(5);
  auto pairs = ultragcn::test_util::clustered_interactions(rng, 40, 50, 6, 3);
  auto [train, test] = ultragcn::test_util::split_fragments(rng, pairs, 0.2);
  auto ds = assemble(train, test, {.holdout_fraction = 0.05, .seed = 3});

  std::ostringstream tr, va, te;
  write_pair_list(tr, ds, Split::train);
  write_pair_list(va, ds, Split::validation);
  write_pair_list(te, ds, Split::test);
  auto again = assemble(fragment_from(tr.str()), fragment_from(va.str()), fragment_from(te.str()));
  EXPECT_EQ(again.user_ids, ds.user_ids);
  EXPECT_EQ(again.item_ids, ds.item_ids);
  EXPECT_EQ(again.train_pairs, ds.train_pairs);
  EXPECT_EQ(again.valid_pairs, ds.valid_pairs);
  EXPECT_EQ(again.test_pairs, ds.test_pairs);
  EXPECT_EQ(again.train_hash(), ds.train_hash());
}

TEST(Manifest, ReportsCountsAndDensity) {
  auto ds = assemble(fragment_from("0 0\n0 1\n1 1\n"), fragment_from(""), fragment_from("1 0\n"));
  auto m = dataset_manifest(ds);
  EXPECT_EQ(m["users"], 2);
  EXPECT_EQ(m["items"], 2);
  EXPECT_EQ(m["interactions"], 4);
  EXPECT_DOUBLE_EQ(m["density"].get<double>(), 1.0);
}
