#pragma once

// End-to-end stages shared by the command-line tool and the experiment harness:
// dataset layout, scorer training, probability maps and bag selection.

#include <string>
#include <vector>

#include <json.hpp>

#include "rmdl/head/head.hpp"
#include "rmdl/select/selection.hpp"
#include "rmdl/slide/dataset_io.hpp"
#include "rmdl/tiling/block_plan.hpp"
#include "rmdl/tiling/probability_map.hpp"
#include "rmdl/tiling/training.hpp"
#include "rmdl/train/trainer.hpp"

namespace rmdl {

/// Block tiling in pixels: block side I, patch side N, stride S (one cell per stride).
struct TilingConfig {
  long block = 1899;
  long patch = 299;
  long stride = 32;
};

struct ScorerStageConfig {
  ScorerKind kind = ScorerKind::mlp;
  std::size_t hidden = 16;
  std::uint32_t patch_stride_cells = 1;  // sliding-window step for annotated regions
  std::size_t normals_per_slide = 40;
  bool hard_negatives = true;
  double hard_negative_threshold = 0.5;
  std::size_t hard_negatives_per_slide = 20;
  ScorerTrainConfig train{};
};

struct PipelineConfig {
  SlideGenConfig generation{};
  std::size_t train_slides = 300;
  std::size_t test_slides = 150;
  TilingConfig tiling{};
  ScorerStageConfig scorer{};
  SelectionConfig selection{};
  HeadConfig head{};
  TrainConfig train{};
  std::uint64_t seed = 0;  // every stage seed derives from this
  unsigned threads = 1;

  /// Pushes the global seed and thread count into the stage configs.
  void apply_seed() {
    generation.seed = seed;
    scorer.train.seed = derive_seed(seed, 101);
    train.seed = derive_seed(seed, 202);
    train.threads = threads;
  }
  std::uint64_t head_init_seed() const { return derive_seed(seed, 303); }

  void validate() const {
    generation.validate();
    selection.validate();
    head.validate();
    train.validate();
    if (scorer.hidden < 1 || scorer.normals_per_slide < 1 || scorer.patch_stride_cells < 1)
      throw ConfigError("scorer: hidden, normals_per_slide and patch_stride_cells must be >= 1");
    if (scorer.train.per_class_batch < 1 || scorer.train.iterations < 1)
      throw ConfigError("scorer: per_class_batch and iterations must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

// ---------------------------------------------------------------- JSON

inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& s = c.scorer;
  return {{"generation", to_json(c.generation)},
          {"train_slides", c.train_slides},
          {"test_slides", c.test_slides},
          {"tiling", {{"block", c.tiling.block}, {"patch", c.tiling.patch}, {"stride", c.tiling.stride}}},
          {"scorer",
           {{"kind", scorer_kind_name(s.kind)},
            {"hidden", s.hidden},
            {"patch_stride_cells", s.patch_stride_cells},
            {"normals_per_slide", s.normals_per_slide},
            {"hard_negatives", s.hard_negatives},
            {"hard_negative_threshold", s.hard_negative_threshold},
            {"hard_negatives_per_slide", s.hard_negatives_per_slide},
            {"per_class_batch", s.train.per_class_batch},
            {"iterations", s.train.iterations},
            {"base_lr", s.train.base_lr},
            {"gamma", s.train.gamma},
            {"period", s.train.period}}},
          {"selection",
           {{"m_prime", c.selection.m_prime},
            {"nms_overlap", c.selection.nms_overlap},
            {"patch_extent", c.selection.patch_extent}}},
          {"head", to_json(c.head)},
          {"train",
           {{"base_lr", c.train.base_lr},
            {"gamma", c.train.gamma},
            {"period", c.train.period},
            {"total_iters", c.train.total_iters},
            {"batch_size", c.train.batch_size},
            {"adam",
             {{"beta1", c.train.adam.beta1},
              {"beta2", c.train.adam.beta2},
              {"epsilon", c.train.adam.epsilon},
              {"decay", c.train.adam.decay}}},
            {"permutation_augment", c.train.permutation_augment}}},
          {"seed", c.seed},
          {"threads", c.threads}};
}

/// Overlays the keys present in `j`; unknown keys are a ConfigError so typos surface.
inline void update_from_json(PipelineConfig& c, const nlohmann::json& j) {
  static const std::vector<std::string> known{"generation", "train_slides", "test_slides", "tiling", "scorer",
                                              "selection",  "head",         "train",       "seed",       "threads"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config section '" + k + "'");
  try {
    if (j.contains("generation")) update_from_json(c.generation, j["generation"]);
    c.train_slides = j.value("train_slides", c.train_slides);
    c.test_slides = j.value("test_slides", c.test_slides);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
    if (j.contains("tiling")) {
      const auto& t = j["tiling"];
      c.tiling.block = t.value("block", c.tiling.block);
      c.tiling.patch = t.value("patch", c.tiling.patch);
      c.tiling.stride = t.value("stride", c.tiling.stride);
    }
    if (j.contains("scorer")) {
      const auto& s = j["scorer"];
      auto& o = c.scorer;
      if (s.contains("kind")) o.kind = scorer_kind_from_name(s["kind"].get<std::string>());
      o.hidden = s.value("hidden", o.hidden);
      o.patch_stride_cells = s.value("patch_stride_cells", o.patch_stride_cells);
      o.normals_per_slide = s.value("normals_per_slide", o.normals_per_slide);
      o.hard_negatives = s.value("hard_negatives", o.hard_negatives);
      o.hard_negative_threshold = s.value("hard_negative_threshold", o.hard_negative_threshold);
      o.hard_negatives_per_slide = s.value("hard_negatives_per_slide", o.hard_negatives_per_slide);
      o.train.per_class_batch = s.value("per_class_batch", o.train.per_class_batch);
      o.train.iterations = s.value("iterations", o.train.iterations);
      o.train.base_lr = s.value("base_lr", o.train.base_lr);
      o.train.gamma = s.value("gamma", o.train.gamma);
      o.train.period = s.value("period", o.train.period);
    }
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      c.selection.m_prime = s.value("m_prime", c.selection.m_prime);
      c.selection.nms_overlap = s.value("nms_overlap", c.selection.nms_overlap);
      c.selection.patch_extent = s.value("patch_extent", c.selection.patch_extent);
    }
    if (j.contains("head")) {
      auto h = to_json(c.head);
      h.update(j["head"]);
      c.head = head_config_from_json(h);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      auto& o = c.train;
      o.base_lr = t.value("base_lr", o.base_lr);
      o.gamma = t.value("gamma", o.gamma);
      o.period = t.value("period", o.period);
      o.total_iters = t.value("total_iters", o.total_iters);
      o.batch_size = t.value("batch_size", o.batch_size);
      o.permutation_augment = t.value("permutation_augment", o.permutation_augment);
      if (t.contains("adam")) {
        const auto& a = t["adam"];
        o.adam.beta1 = a.value("beta1", o.adam.beta1);
        o.adam.beta2 = a.value("beta2", o.adam.beta2);
        o.adam.epsilon = a.value("epsilon", o.adam.epsilon);
        o.adam.decay = a.value("decay", o.adam.decay);
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------- dataset layout

/// Slide records for `n_train` training slides followed by `n_test` test slides.
inline Dataset plan_dataset(const SlideGenConfig& gen, std::size_t n_train, std::size_t n_test) {
  gen.validate();
  Dataset ds;
  ds.generation = gen;
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    const auto slide = generate_dataset_slide(gen, i);
    ds.slides.push_back({slide.id, slide.label, slide.side, slide.seed, i, i < n_train ? "train" : "test"});
  }
  return ds;
}

inline SyntheticSlide regenerate_slide(const SlideGenConfig& gen, const SlideRecord& r) {
  auto slide = generate_dataset_slide(gen, r.index);
  if (slide.id != r.id || slide.label != r.label || slide.seed != r.seed) {
    throw IoError("slide '" + r.id + "' does not match its manifest record (generation settings changed?)");
  }
  return slide;
}

inline std::vector<SyntheticSlide> regenerate_split(const Dataset& ds, std::string_view split) {
  std::vector<SyntheticSlide> out;
  for (const auto& r : ds.slides)
    if (split.empty() || r.split == split) out.push_back(regenerate_slide(ds.generation, r));
  return out;
}

// ---------------------------------------------------------------- scorer

inline std::vector<LabeledFeatures> annotated_samples(const std::vector<SyntheticSlide>& slides,
                                                      const FeatureModel& features, const ScorerStageConfig& cfg,
                                                      std::uint64_t seed) {
  std::vector<LabeledFeatures> out;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const auto sampling = extract_training_patches(slides[i], cfg.patch_stride_cells, cfg.normals_per_slide, rng);
    for (const auto& p : sampling.patches) out.push_back({features.cell_features(slides[i], p.cell), p.grade});
  }
  return out;
}

/// Trains on annotated patches; optionally adds normal cells the first model scores
/// as abnormal and trains a second round from the first round's weights.
inline ScorerModel train_patch_scorer(const std::vector<SyntheticSlide>& slides, const FeatureModel& features,
                                      const ScorerStageConfig& cfg) {
  auto samples = annotated_samples(slides, features, cfg, derive_seed(cfg.train.seed, 1));
  Rng init(derive_seed(cfg.train.seed, 2));
  ScorerModel model(cfg.kind, features.dim(), cfg.hidden, init);
  model = train_scorer(samples, std::move(model), cfg.train).model;
  if (!cfg.hard_negatives) return model;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    auto mined = mine_hard_negatives(model, slides[i], &features, cfg.hard_negative_threshold);
    Rng rng(derive_seed(derive_seed(cfg.train.seed, 3), i));
    for (std::size_t k = 0; k < mined.size() && k < cfg.hard_negatives_per_slide; ++k) {
      std::swap(mined[k], mined[k + rng.below(mined.size() - k)]);
      samples.push_back({features.cell_features(slides[i], mined[k].cell), Grade::normal});
    }
  }
  auto second = cfg.train;
  second.seed = derive_seed(cfg.train.seed, 4);
  return train_scorer(samples, std::move(model), second).model;
}

// ---------------------------------------------------------------- selection

inline InstanceBag select_bag(const SyntheticSlide& slide, const PatchScorer& scorer, const FeatureModel& features,
                              const SelectionConfig& sel, const TilingConfig& tiling) {
  const auto plan = plan_blocks_for_grid(slide.side, slide.side, tiling.block, tiling.patch, tiling.stride);
  const auto map = stitch_probability_map(slide, scorer, plan, &features);
  return build_bag(slide, select_discriminative_instances(map, sel), features, sel.m_prime);
}

inline std::vector<InstanceBag> select_bags(const std::vector<SyntheticSlide>& slides, const PatchScorer& scorer,
                                            const FeatureModel& features, const SelectionConfig& sel,
                                            const TilingConfig& tiling, unsigned threads = 1) {
  sel.validate();
  std::vector<InstanceBag> bags(slides.size());
  parallel_for(slides.size(), threads,
               [&](std::size_t k) { bags[k] = select_bag(slides[k], scorer, features, sel, tiling); });
  return bags;
}

inline std::vector<InstanceBag> bags_of_split(const Dataset& ds, std::string_view split) {
  std::vector<InstanceBag> out;
  for (const auto& r : ds.slides) {
    if (r.split != split) continue;
    auto it = std::find_if(ds.bags.begin(), ds.bags.end(), [&](const InstanceBag& b) { return b.slide_id == r.id; });
    if (it == ds.bags.end()) throw IoError("no bag for slide '" + r.id + "'; run select first");
    out.push_back(*it);
  }
  return out;
}

}  // namespace rmdl
