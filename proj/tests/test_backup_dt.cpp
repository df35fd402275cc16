#include <gtest/gtest.h>

#include "kseg/kseg.hpp"
#include "support.hpp"

using namespace kseg;

namespace {

DtSamples random_samples(Rng& rng, std::size_t n, std::size_t dims, int classes, int value_range) {
  DtSamples d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::int16_t> x(dims);
    for (auto& v : x) v = static_cast<std::int16_t>(rng.uniform_int(-value_range, value_range));
    d.features.push_back(std::move(x));
    d.labels.push_back(static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return d;
}

}  // namespace

TEST(DtFeatures, RightAlignedWithZeroFill) {
  const std::vector<std::int16_t> f{5, -6};
  EXPECT_EQ(dt_features(f, 4), (std::vector<std::int16_t>{0, 0, 5, -6}));
  const std::vector<std::int16_t> g{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(dt_features(g, 4), (std::vector<std::int16_t>{1, 2, 3, 4}));
}

TEST(Dt, SeparableOneFeatureGivesDepthOne) {
  DtSamples d;
  for (int i = 0; i < 20; ++i) {
    d.features.push_back({static_cast<std::int16_t>(i < 10 ? -100 - i : 100 + i)});
    d.labels.push_back(i < 10 ? 0 : 1);
  }
  const auto t = train_dt(d);
  EXPECT_EQ(t.depth(), 1);
  for (std::size_t i = 0; i < d.labels.size(); ++i) EXPECT_EQ(dt_predict(t, d.features[i]), d.labels[i]);
}

TEST(Dt, IdenticalFeaturesGiveMajorityLeaf) {
  DtSamples d;
  for (int i = 0; i < 12; ++i) {
    d.features.push_back({7, 7});
    d.labels.push_back(i < 5 ? 0 : 2);
  }
  const auto t = train_dt(d);
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_EQ(t.nodes[0].label, 2);
}

TEST(Dt, SingleClassWarns) {
  DtSamples d;
  for (int i = 0; i < 6; ++i) {
    d.features.push_back({static_cast<std::int16_t>(i)});
    d.labels.push_back(3);
  }
  std::vector<std::string> warnings;
  const auto t = train_dt(d, {}, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(dt_predict(t, std::vector<std::int16_t>{100}), 3);
  EXPECT_THROW(train_dt(DtSamples{}), TrainingError);
}

TEST(Dt, RootSplitMatchesExhaustiveSearch) {
  Rng rng(44);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto d = random_samples(rng, 10 + rng.below(60), 1 + rng.below(4), 2 + static_cast<int>(rng.below(3)),
                                  static_cast<int>(3 + rng.below(20)));
    const std::size_t min_leaf = 1 + rng.below(6);
    std::vector<std::size_t> idx(d.labels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto got = best_split(d, idx, min_leaf);
    const auto want = kseg::testing::naive_best_split(d, min_leaf);
    ASSERT_EQ(got.found, want.found) << "trial " << trial;
    if (!want.found) continue;
    EXPECT_NEAR(got.gain, want.gain, 1e-12);
    if (want.ties == 1) {
      EXPECT_EQ(got.feature, want.feature);
      EXPECT_EQ(got.threshold, want.threshold);
      ++compared;
    }
  }
  EXPECT_GT(compared, 100);
}

TEST(Dt, DepthAndLeafLimits) {
  Rng rng(3);
  const auto d = random_samples(rng, 400, 4, 4, 300);
  const auto t = train_dt(d, {3, 10});
  EXPECT_LE(t.depth(), 3);
  // Every leaf holds at least min_leaf training samples.
  std::vector<std::size_t> hits(t.nodes.size(), 0);
  for (const auto& x : d.features) {
    std::size_t n = 0;
    while (!t.nodes[n].leaf)
      n = static_cast<std::size_t>(x[static_cast<std::size_t>(t.nodes[n].feature)] <= t.nodes[n].threshold
                                       ? t.nodes[n].left
                                       : t.nodes[n].right);
    ++hits[n];
  }
  for (std::size_t n = 0; n < t.nodes.size(); ++n)
    if (t.nodes[n].leaf) {
      EXPECT_GE(hits[n], 10u);
    }
}

TEST(DtPredict, SingleLeafAndStump) {
  BackupTree leaf;
  leaf.nodes.push_back(DtNode{true, 5, 0, 0, -1, -1});
  EXPECT_EQ(dt_predict(leaf, std::vector<std::int16_t>{1, 2, 3, 4}), 5);
  BackupTree stump;
  stump.nodes = {DtNode{false, 0, 0, 0, 1, 2}, DtNode{true, 1, 0, 0, -1, -1}, DtNode{true, 2, 0, 0, -1, -1}};
  EXPECT_EQ(dt_predict(stump, std::vector<std::int16_t>{-300, 0, 0, 0}), 1);
  EXPECT_EQ(dt_predict(stump, std::vector<std::int16_t>{300, 0, 0, 0}), 2);
}

TEST(DtPredict, AgreesWithRecursiveWalker) {
  Rng rng(71);
  const auto d = random_samples(rng, 600, 4, 5, 1500);
  const auto t = train_dt(d);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::int16_t> x(4);
    for (auto& v : x) v = static_cast<std::int16_t>(rng.uniform_int(-1500, 1500));
    ASSERT_EQ(dt_predict(t, x), kseg::testing::walk_tree(t, x));
  }
}

TEST(DtJson, RoundTripAndValidation) {
  Rng rng(2);
  const auto t = train_dt(random_samples(rng, 300, 4, 3, 100));
  EXPECT_EQ(tree_from_json(tree_to_json(t)), t);
  auto j = nlohmann::json::parse(tree_to_json(t).dump());
  j["format"] = "other";
  EXPECT_THROW(tree_from_json(j), FormatError);
}
