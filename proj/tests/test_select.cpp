#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rmdl/select/selection.hpp"

using namespace rmdl;

namespace {

std::vector<Candidate> random_candidates(Rng& rng, std::size_t n, std::uint32_t side, bool coarse_scores) {
  std::vector<Candidate> c;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = coarse_scores ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
    c.push_back({{static_cast<std::uint32_t>(rng.below(side)), static_cast<std::uint32_t>(rng.below(side))}, s,
                 Grade::cancer});
  }
  return c;
}

TEST(Nms, SingleCandidateIsSelected) {
  const std::vector<Candidate> c{{{3, 4}, 0.5, Grade::normal}};
  EXPECT_EQ(nms_select(c, 0.68, 10, 4), c);
}

TEST(Nms, CoincidentCandidatesKeepTheHigher) {
  const std::vector<Candidate> c{{{3, 4}, 0.8, Grade::normal}, {{3, 4}, 0.9, Grade::normal}};
  const auto kept = nms_select(c, 0.68, 10, 4);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
}

TEST(Nms, EmptyInput) { EXPECT_TRUE(nms_select({}, 0.68, 5, 4).empty()); }

TEST(Nms, OverlapMeasure) {
  EXPECT_EQ(patch_overlap({0, 0}, {0, 0}, 4), 1.0);
  EXPECT_EQ(patch_overlap({0, 0}, {1, 0}, 4), 0.75);
  EXPECT_EQ(patch_overlap({0, 0}, {1, 1}, 4), 9.0 / 16.0);
  EXPECT_EQ(patch_overlap({0, 0}, {4, 0}, 4), 0.0);
  EXPECT_EQ(patch_overlap({5, 2}, {3, 3}, 4), patch_overlap({3, 3}, {5, 2}, 4));
}

TEST(Nms, PropertyMatchesGreedyOracle) {
  Rng rng(1000);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.below(201));
    const auto extent = static_cast<std::uint32_t>(1 + rng.below(6));
    const double thresh = rng.uniform(0.05, 0.95);
    const auto k = static_cast<std::size_t>(1 + rng.below(60));
    const auto cands = random_candidates(rng, n, 24, trial % 2 == 0);
    std::vector<oracle::BoxCandidate> boxes;
    for (const auto& c : cands) boxes.push_back({c.cell.x, c.cell.y, c.score});
    const auto expected = oracle::greedy_nms(boxes, thresh, extent, k);
    const auto got = nms_select(cands, thresh, k, extent);
    ASSERT_EQ(got.size(), expected.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_EQ(static_cast<long>(got[i].cell.x), expected[i].x);
      ASSERT_EQ(static_cast<long>(got[i].cell.y), expected[i].y);
      ASSERT_EQ(got[i].score, expected[i].score);
    }
  }
}

TEST(Nms, PropertyKeptPatchesDoNotOverlapBeyondThreshold) {
  Rng rng(1001);
  for (int trial = 0; trial < 300; ++trial) {
    const double thresh = rng.uniform(0.05, 0.95);
    const auto kept = nms_select(random_candidates(rng, 150, 30, false), thresh, 100, 5);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) ASSERT_LE(patch_overlap(kept[i].cell, kept[j].cell, 5), thresh);
  }
}

TEST(Nms, NonFiniteScoreIsRejected) {
  const std::vector<Candidate> c{{{0, 0}, std::nan(""), Grade::normal}};
  EXPECT_THROW(nms_select(c, 0.5, 1, 2), std::invalid_argument);
}

ProbabilityMap uniform_map(std::uint32_t side) {
  ProbabilityMap map(side, side);
  for (std::size_t i = 0; i < map.tissue.size(); ++i) {
    map.tissue[i] = 1;
    for (std::size_t g = 0; g < kNumGrades; ++g) map.data[i * kNumGrades + g] = 1.0 / 3.0;
  }
  return map;
}

TEST(Selection, UniformMapFollowsTieBreak) {
  const auto map = uniform_map(12);
  const SelectionConfig cfg{3, 0.68, 4};
  const auto sel = select_discriminative_instances(map, cfg);
  ASSERT_EQ(sel.size(), 9u);
  // Row-major greedy: (0,0), then the first cell with overlap <= 0.68 is (2,0) (0.5), then (4,0).
  const std::vector<Cell> expected{{0, 0}, {2, 0}, {4, 0}};
  for (std::size_t g = 0; g < kNumGrades; ++g)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(sel[g * 3 + i].cell, expected[i]);
      EXPECT_EQ(sel[g * 3 + i].channel, static_cast<Grade>(g));
    }
}

TEST(Selection, HotCancerCellComesFirst) {
  auto map = uniform_map(10);
  map.at({7, 2}, Grade::cancer) = 0.9;
  map.at({7, 2}, Grade::normal) = 0.05;
  map.at({7, 2}, Grade::dysplasia) = 0.05;
  const auto sel = select_discriminative_instances(map, {5, 0.68, 3});
  EXPECT_EQ(sel[10].cell, (Cell{7, 2}));
  EXPECT_EQ(sel[10].channel, Grade::cancer);
}

TEST(Selection, NonTissueCellsAreNeverSelected) {
  auto map = uniform_map(10);
  for (std::uint32_t x = 0; x < 10; ++x) map.tissue[x] = 0;  // first row is background
  map.at({3, 0}, Grade::cancer) = 1.0;
  for (const auto& c : select_discriminative_instances(map, {20, 0.68, 2})) EXPECT_GT(c.cell.y, 0u);
}

TEST(Selection, FullSizeBagHasThreeHundredEntries) {
  SlideGenConfig scfg;
  scfg.seed = 3;
  const auto slide = generate_dataset_slide(scfg, 0);
  const FeatureModel features(scfg);
  const auto map = stitch_probability_map(slide, OracleScorer{}, plan_blocks_for_grid(64, 64, 1899, 299, 32), nullptr);
  const SelectionConfig cfg;
  const auto bag = build_bag(slide, select_discriminative_instances(map, cfg), features, cfg.m_prime);
  EXPECT_EQ(bag.size(), 300u);
  EXPECT_EQ(bag.provenance.size(), 300u);
  EXPECT_EQ(bag.dim(), features.dim());
  EXPECT_TRUE(bag.features.all_finite());
  for (std::size_t i = 0; i < bag.size(); i += 37) {
    const auto f = features.cell_features(slide, bag.provenance[i].cell);
    for (std::size_t j = 0; j < f.size(); ++j)
      EXPECT_EQ(bag.features(i, j), static_cast<double>(static_cast<float>(f[j])));
  }
}

TEST(Selection, DeterministicGivenMap) {
  Rng rng(7);
  auto map = uniform_map(20);
  for (double& v : map.data) v = std::round(rng.uniform() * 4.0) / 4.0;  // many ties
  const SelectionConfig cfg{15, 0.5, 3};
  EXPECT_EQ(select_discriminative_instances(map, cfg), select_discriminative_instances(map, cfg));
  for (auto g : kAllGrades) {
    std::size_t n = 0;
    for (const auto& c : select_discriminative_instances(map, cfg)) n += c.channel == g;
    EXPECT_LE(n, cfg.m_prime);
  }
}

TEST(Selection, MapWithoutTissueIsAnError) {
  ProbabilityMap map(5, 5);
  EXPECT_THROW(select_discriminative_instances(map, {}), EmptySelectionError);
}

TEST(Selection, InvalidConfig) {
  const auto map = uniform_map(4);
  EXPECT_THROW(select_discriminative_instances(map, {0, 0.68, 4}), ConfigError);
  EXPECT_THROW(select_discriminative_instances(map, {1, 1.0, 4}), ConfigError);
}

std::vector<double> coordinate_features(Cell c) { return {static_cast<double>(c.x), static_cast<double>(c.y)}; }

TEST(BuildBag, ThreeSelectionsNeedNoPadding) {
  const std::vector<Candidate> sel{
      {{1, 1}, 0.7, Grade::normal}, {{2, 2}, 0.2, Grade::dysplasia}, {{3, 3}, 0.1, Grade::cancer}};
  const auto bag = build_bag("s", sel, coordinate_features, Grade::dysplasia, 1);
  EXPECT_EQ(bag.features, (Matrix{{1, 1}, {2, 2}, {3, 3}}));
  EXPECT_EQ(bag.label, Grade::dysplasia);
}

TEST(BuildBag, EmptyChannelRepeatsGlobalBest) {
  const std::vector<Candidate> sel{{{1, 1}, 0.4, Grade::normal}, {{5, 6}, 0.9, Grade::dysplasia}};
  const auto bag = build_bag("s", sel, coordinate_features, Grade::normal, 1);
  ASSERT_EQ(bag.size(), 3u);
  EXPECT_EQ(bag.provenance[2].cell, (Cell{5, 6}));
  EXPECT_EQ(bag.features(2, 0), 5.0);
  EXPECT_EQ(bag.features(2, 1), 6.0);
}

TEST(BuildBag, ShortChannelRepeatsItsOwnBest) {
  const std::vector<Candidate> sel{{{1, 1}, 0.4, Grade::normal},
                                   {{2, 1}, 0.3, Grade::normal},
                                   {{5, 6}, 0.9, Grade::dysplasia},
                                   {{7, 7}, 0.8, Grade::cancer}};
  const auto padded = pad_selections(sel, 3);
  ASSERT_EQ(padded.size(), 9u);
  EXPECT_EQ(padded[2].cell, (Cell{1, 1}));
  EXPECT_EQ(padded[4].cell, (Cell{5, 6}));
  EXPECT_EQ(padded[8].cell, (Cell{7, 7}));
}

TEST(BuildBag, FeatureDimensionMismatch) {
  const std::vector<Candidate> sel{{{1, 1}, 0.4, Grade::normal}, {{2, 1}, 0.3, Grade::dysplasia}};
  const FeatureSource ragged = [](Cell c) { return std::vector<double>(c.x, 0.0); };
  EXPECT_THROW(build_bag("s", sel, ragged, Grade::normal, 1), DimensionError);
}

}  // namespace
