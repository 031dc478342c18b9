#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "rmdl/tiling/block_plan.hpp"
#include "rmdl/tiling/probability_map.hpp"
#include "rmdl/tiling/training.hpp"

using namespace rmdl;

namespace {

class ConstantScorer final : public PatchScorer {
 public:
  explicit ConstantScorer(ClassProbs p) : p_(p) {}
  ClassProbs score(const CellContext&) const override { return p_; }
  bool needs_features() const override { return false; }

 private:
  ClassProbs p_;
};

class AbnormalEverywhereScorer final : public PatchScorer {
 public:
  ClassProbs score(const CellContext&) const override { return {0.0, 0.5, 0.5}; }
  bool needs_features() const override { return false; }
};

// ---------------------------------------------------------------- geometry

TEST(BlockPlan, ReferenceConstants) {
  const auto plan = plan_blocks(100000, 80000, 1899, 299, 32);
  EXPECT_EQ(plan.output_side, 51);
  EXPECT_EQ(plan.block_stride, 1632);
}

TEST(BlockPlan, BlockEqualToPatch) {
  const auto plan = plan_blocks(1000, 1000, 299, 299, 32);
  EXPECT_EQ(plan.output_side, 1);
  EXPECT_EQ(plan.block_stride, 32);
}

TEST(BlockPlan, NonDividingBlock) {
  EXPECT_EQ(plan_blocks(5000, 5000, 1000, 299, 32).output_side, 23);
  EXPECT_EQ(oracle::count_block_positions(1000, 299, 32), 23);
}

TEST(BlockPlan, InvalidGeometryIsRejected) {
  EXPECT_THROW(plan_blocks(100, 100, 200, 299, 32), GeometryError);
  EXPECT_THROW(plan_blocks(100, 100, 299, 299, 0), GeometryError);
  EXPECT_THROW(plan_blocks(100, 100, 299, 20, 32), GeometryError);
}

TEST(BlockPlan, SmallSlideGetsOneClippedBlock) {
  const auto plan = plan_blocks(500, 400, 1899, 299, 32);
  ASSERT_EQ(plan.origins.size(), 1u);
  EXPECT_EQ(plan.origins[0], (PixelPoint{0, 0}));
}

TEST(BlockPlan, PropertyOutputSideMatchesEnumeration) {
  Rng rng(500);
  for (int trial = 0; trial < 500; ++trial) {
    const long n = 1 + static_cast<long>(rng.below(400));
    const long s = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(n)));
    const long i = n + static_cast<long>(rng.below(3000));
    const auto plan = plan_blocks(10 * i, 10 * i, i, n, s);
    ASSERT_EQ(plan.output_side, oracle::count_block_positions(i, n, s)) << i << " " << n << " " << s;
    ASSERT_EQ(plan.block_stride, i - n + s);
  }
}

TEST(BlockPlan, PropertyOwnedCellsTileTheGridAndPixelsAreCovered) {
  Rng rng(501);
  for (int trial = 0; trial < 100; ++trial) {
    const long s = 1 + static_cast<long>(rng.below(8));
    const long n = s + static_cast<long>(rng.below(20));
    const long i = n + static_cast<long>(rng.below(60));
    const auto cells = static_cast<std::uint32_t>(8 + rng.below(60));
    const auto plan = plan_blocks_for_grid(cells, cells, i, n, s);
    std::vector<int> owners(static_cast<std::size_t>(cells) * cells, 0);
    for (std::size_t b = 0; b < plan.origins.size(); ++b) {
      const auto r = owned_cells(plan, plan.origins[b], cells, cells);
      EXPECT_LE(static_cast<long>(r.x1 - r.x0), plan.output_side);
      for (auto y = r.y0; y < r.y1; ++y)
        for (auto x = r.x0; x < r.x1; ++x) ++owners[static_cast<std::size_t>(y) * cells + x];
      if (b > 0) {
        EXPECT_LT(plan.origins[b - 1].y * plan.width + plan.origins[b - 1].x,
                  plan.origins[b].y * plan.width + plan.origins[b].x);
      }
    }
    for (int o : owners) ASSERT_EQ(o, 1);
    // Every pixel lies in some block.
    for (long px = 0; px < plan.width; px += 1 + static_cast<long>(rng.below(5))) {
      bool covered = false;
      for (const auto& o : plan.origins) covered = covered || (px >= o.x && px < o.x + i);
      ASSERT_TRUE(covered);
    }
  }
}

// ---------------------------------------------------------------- stitching

SlideGenConfig small_config() {
  SlideGenConfig cfg;
  cfg.side = 40;
  cfg.seed = 17;
  return cfg;
}

TEST(Stitch, ConstantScorerGivesConstantTissueMap) {
  const auto slide = generate_dataset_slide(small_config(), 0);
  const ConstantScorer scorer({0.2, 0.3, 0.5});
  const auto map = stitch_probability_map(slide, scorer, plan_blocks_for_grid(40, 40, 1899, 299, 32), nullptr);
  for (std::uint32_t y = 0; y < 40; ++y)
    for (std::uint32_t x = 0; x < 40; ++x) {
      const ClassProbs expect = slide.is_tissue({x, y}) ? ClassProbs{0.2, 0.3, 0.5} : ClassProbs{1.0, 0.0, 0.0};
      for (auto g : kAllGrades) EXPECT_EQ(map.at({x, y}, g), expect[to_index(g)]);
    }
}

TEST(Stitch, DifferentPlansGiveIdenticalMaps) {
  const auto cfg = small_config();
  const FeatureModel features(cfg);
  Rng rng(3);
  ScorerModel scorer(ScorerKind::mlp, cfg.feature_dim, 8, rng);
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto slide = generate_dataset_slide(cfg, i);
    const auto a = stitch_probability_map(slide, scorer, plan_blocks_for_grid(40, 40, 1899, 299, 32), &features);
    const auto b = stitch_probability_map(slide, scorer, plan_blocks_for_grid(40, 40, 400, 299, 32), &features);
    const auto c = stitch_probability_map(slide, scorer, plan_blocks_for_grid(40, 40, 61, 45, 7), &features, 3);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
  }
}

TEST(Stitch, OracleScorerOnNormalSlideHasNoCancer) {
  auto cfg = small_config();
  cfg.class_mix = {1.0, 0.0, 0.0};
  const auto slide = generate_dataset_slide(cfg, 4);
  const auto map = stitch_probability_map(slide, OracleScorer{}, plan_blocks_for_grid(40, 40, 1899, 299, 32), nullptr);
  for (std::uint32_t y = 0; y < 40; ++y)
    for (std::uint32_t x = 0; x < 40; ++x) EXPECT_EQ(map.at({x, y}, Grade::cancer), 0.0);
}

TEST(Stitch, RowsSumToOne) {
  const auto cfg = small_config();
  const FeatureModel features(cfg);
  Rng rng(4);
  ScorerModel scorer(ScorerKind::mlp, cfg.feature_dim, 8, rng);
  const auto slide = generate_dataset_slide(cfg, 5);
  const auto map = stitch_probability_map(slide, scorer, plan_blocks_for_grid(40, 40, 1899, 299, 32), &features);
  for (std::size_t i = 0; i < map.data.size(); i += 3) {
    EXPECT_NEAR(map.data[i] + map.data[i + 1] + map.data[i + 2], 1.0, 1e-9);
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(map.data[i + k], 0.0);
      EXPECT_LE(map.data[i + k], 1.0);
    }
  }
}

TEST(Stitch, InvalidScorerOutputNamesTheCell) {
  const auto slide = generate_dataset_slide(small_config(), 0);
  const ConstantScorer bad({0.5, 0.6, 0.0});
  try {
    stitch_probability_map(slide, bad, plan_blocks_for_grid(40, 40, 1899, 299, 32), nullptr);
    FAIL();
  } catch (const ScorerError& e) {
    EXPECT_NE(std::string(e.what()).find("cell ("), std::string::npos);
  }
}

TEST(Stitch, PlanMustCoverSlide) {
  const auto slide = generate_dataset_slide(small_config(), 0);
  EXPECT_THROW(stitch_probability_map(slide, OracleScorer{}, plan_blocks_for_grid(20, 40, 1899, 299, 32), nullptr),
               GeometryError);
}

TEST(Stitch, FloatImageExportLayout) {
  ProbabilityMap map(2, 1);
  map.data = {1.0, 0.0, 0.0, 0.25, 0.25, 0.5};
  const auto bytes = encode_float_image(map);
  const auto nl = bytes.find('\n');
  const auto header = nlohmann::json::parse(bytes.substr(0, nl));
  EXPECT_EQ(header["width"], 2);
  EXPECT_EQ(header["channels"], 3);
  EXPECT_EQ(bytes.size() - nl - 1, 2u * 3 * 4);
  const auto pgm = encode_channel_pgm(map, Grade::cancer);
  EXPECT_EQ(pgm.substr(0, 2), "P5");
  EXPECT_EQ(static_cast<unsigned char>(pgm.back()), 128);
}

// ---------------------------------------------------------------- training patches

SyntheticSlide hand_slide(std::uint32_t side) {
  SyntheticSlide s;
  s.id = "hand";
  s.side = side;
  s.grades.assign(side * side, Grade::normal);
  s.tissue.assign(side * side, 1);
  s.gray.assign(side * side, 0.5);
  return s;
}

TEST(TrainingPatches, AllNormalSlideYieldsOnlyNormals) {
  auto cfg = small_config();
  cfg.class_mix = {1.0, 0.0, 0.0};
  const auto slide = generate_dataset_slide(cfg, 1);
  Rng rng(1);
  const auto r = extract_training_patches(slide, 2, 30, rng);
  ASSERT_EQ(r.patches.size(), 30u);
  std::set<std::pair<std::uint32_t, std::uint32_t>> unique;
  for (const auto& p : r.patches) {
    EXPECT_EQ(p.grade, Grade::normal);
    EXPECT_TRUE(slide.is_tissue(p.cell));
    unique.insert({p.cell.x, p.cell.y});
  }
  EXPECT_EQ(unique.size(), 30u);
}

TEST(TrainingPatches, FourCellCancerBlobStrideOne) {
  auto s = hand_slide(10);
  for (std::uint32_t y = 4; y < 6; ++y)
    for (std::uint32_t x = 4; x < 6; ++x) s.grades[s.index({x, y})] = Grade::cancer;
  s.label = Grade::cancer;
  Rng rng(2);
  const auto r = extract_training_patches(s, 1, 0, rng);
  EXPECT_EQ(r.patches.size(), 4u);
  for (const auto& p : r.patches) EXPECT_EQ(p.grade, Grade::cancer);
}

TEST(TrainingPatches, AbnormalSetEqualsLatticeIntersection) {
  auto cfg = small_config();
  cfg.class_mix = {0.0, 0.5, 0.5};
  cfg.abnormal_fraction = 0.2;
  for (std::uint32_t stride : {1u, 2u, 3u}) {
    const auto slide = generate_dataset_slide(cfg, stride);
    Rng rng(3);
    const auto r = extract_training_patches(slide, stride, 5, rng);
    std::vector<TrainingPatch> abnormal;
    for (const auto& p : r.patches)
      if (p.grade != Grade::normal) abnormal.push_back(p);
    std::vector<TrainingPatch> expected;
    for (std::uint32_t y = 0; y < slide.side; ++y)
      for (std::uint32_t x = 0; x < slide.side; ++x)
        if (x % stride == 0 && y % stride == 0 && slide.is_tissue({x, y}) && slide.grade_at({x, y}) != Grade::normal)
          expected.push_back({{x, y}, slide.grade_at({x, y})});
    EXPECT_EQ(abnormal, expected);
  }
}

TEST(TrainingPatches, TooManyNormalsAreClipped) {
  auto s = hand_slide(4);
  Rng rng(4);
  const auto r = extract_training_patches(s, 1, 100, rng);
  EXPECT_TRUE(r.normals_clipped);
  EXPECT_EQ(r.patches.size(), 16u);
}

// ---------------------------------------------------------------- scorer training

std::vector<LabeledFeatures> separable_samples(std::size_t per_class, std::uint64_t seed) {
  SlideGenConfig cfg;
  cfg.noise = 0.0;
  cfg.confuser_rate = 0.0;
  cfg.seed = seed;
  const FeatureModel model(cfg);
  std::vector<LabeledFeatures> out;
  for (auto g : kAllGrades)
    for (std::size_t i = 0; i < per_class * (1 + to_index(g)); ++i) {
      const auto p = model.prototype(g);
      out.push_back({{p.begin(), p.end()}, g});
    }
  return out;
}

TEST(TrainScorer, SeparableFeaturesReachFullAccuracy) {
  const auto samples = separable_samples(10, 5);
  Rng rng(1);
  for (auto kind : {ScorerKind::linear, ScorerKind::mlp}) {
    ScorerTrainConfig cfg;
    cfg.iterations = 200;
    const auto r = train_scorer(samples, ScorerModel(kind, 32, 16, rng), cfg);
    EXPECT_EQ(scorer_accuracy(r.model, samples), 1.0);
    EXPECT_LT(r.loss.back(), r.loss.front());
  }
}

TEST(TrainScorer, BatchesAreExactlyBalanced) {
  const auto samples = separable_samples(7, 6);  // pools of 7, 14, 21
  Rng rng(2);
  ScorerTrainConfig cfg;
  cfg.iterations = 50;
  cfg.record_batches = true;
  const auto r = train_scorer(samples, ScorerModel(ScorerKind::linear, 32, 0, rng), cfg);
  ASSERT_EQ(r.batch_counts.size(), 50u);
  for (const auto& c : r.batch_counts) {
    EXPECT_EQ(c[0], cfg.per_class_batch);
    EXPECT_EQ(c[1], cfg.per_class_batch);
    EXPECT_EQ(c[2], cfg.per_class_batch);
  }
}

TEST(TrainScorer, ZeroLearningRateKeepsParameters) {
  const auto samples = separable_samples(5, 7);
  Rng rng(3);
  ScorerModel initial(ScorerKind::mlp, 32, 8, rng);
  ScorerTrainConfig cfg;
  cfg.iterations = 20;
  cfg.base_lr = 0.0;
  const auto r = train_scorer(samples, initial, cfg);
  EXPECT_EQ(r.model.params(), initial.params());
}

TEST(TrainScorer, MissingClassIsABalanceError) {
  auto samples = separable_samples(5, 8);
  std::erase_if(samples, [](const auto& s) { return s.grade == Grade::dysplasia; });
  Rng rng(4);
  EXPECT_THROW(train_scorer(samples, ScorerModel(ScorerKind::linear, 32, 0, rng), {}), BalanceError);
}

TEST(TrainScorer, JsonRoundTrip) {
  Rng rng(5);
  const ScorerModel m(ScorerKind::mlp, 6, 4, rng);
  const auto back = scorer_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.kind(), ScorerKind::mlp);
  EXPECT_EQ(back.params(), m.params());
}

// ---------------------------------------------------------------- hard negatives

TEST(HardNegatives, PerfectScorerFindsNone) {
  auto cfg = small_config();
  cfg.class_mix = {0.0, 0.0, 1.0};
  const auto slide = generate_dataset_slide(cfg, 2);
  EXPECT_TRUE(mine_hard_negatives(OracleScorer{}, slide, nullptr, 0.5).empty());
}

TEST(HardNegatives, AbnormalEverywhereReturnsAllNormalTissue) {
  auto cfg = small_config();
  cfg.class_mix = {0.0, 0.0, 1.0};
  const auto slide = generate_dataset_slide(cfg, 2);
  const auto mined = mine_hard_negatives(AbnormalEverywhereScorer{}, slide, nullptr, 0.5);
  EXPECT_EQ(mined.size(), slide.tissue_count() - slide.abnormal_count());
}

TEST(HardNegatives, MatchesBruteForceFilter) {
  auto cfg = small_config();
  cfg.confuser_rate = 0.3;
  const FeatureModel features(cfg);
  Rng rng(6);
  ScorerModel scorer(ScorerKind::mlp, cfg.feature_dim, 8, rng);
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto slide = generate_dataset_slide(cfg, i);
    for (double t : {0.3, 0.5, 0.7}) {
      std::vector<TrainingPatch> expected;
      for (std::uint32_t y = 0; y < slide.side; ++y)
        for (std::uint32_t x = 0; x < slide.side; ++x) {
          const Cell c{x, y};
          if (!slide.is_tissue(c) || slide.grade_at(c) != Grade::normal) continue;
          const auto f = features.cell_features(slide, c);
          const auto p = scorer.score({slide, c, f});
          if (p[1] + p[2] > t) expected.push_back({c, Grade::normal});
        }
      EXPECT_EQ(mine_hard_negatives(scorer, slide, &features, t), expected);
    }
  }
}

}  // namespace
