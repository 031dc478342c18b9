#pragma once

// Localization-scorer training: annotated patch sampling, balanced-batch training,
// and hard-negative mining.

#include <algorithm>
#include <array>
#include <vector>

#include "rmdl/numerics/adam.hpp"
#include "rmdl/slide/features.hpp"
#include "rmdl/tiling/scorer.hpp"
#include "rmdl/train/loss.hpp"

namespace rmdl {

struct TrainingPatch {
  Cell cell;
  Grade grade = Grade::normal;
  friend bool operator==(const TrainingPatch&, const TrainingPatch&) = default;
};

struct PatchSampling {
  std::vector<TrainingPatch> patches;
  bool normals_clipped = false;  // fewer normal cells were available than requested
};

/// Abnormal cells hit by a sliding window on the lattice {x, y multiples of
/// stride_cells}, followed by `n_normal` normal tissue cells drawn without replacement.
inline PatchSampling extract_training_patches(const SyntheticSlide& slide, std::uint32_t stride_cells,
                                              std::size_t n_normal, Rng& rng) {
  if (stride_cells < 1) throw ConfigError("extract_training_patches: stride must be >= 1");
  if (slide.tissue_count() == 0) throw ConfigError("extract_training_patches: slide '" + slide.id + "' has no tissue");
  PatchSampling out;
  for (std::uint32_t y = 0; y < slide.side; y += stride_cells)
    for (std::uint32_t x = 0; x < slide.side; x += stride_cells) {
      const Cell c{x, y};
      if (slide.is_tissue(c) && slide.grade_at(c) != Grade::normal) out.patches.push_back({c, slide.grade_at(c)});
    }
  std::vector<Cell> normals;
  for (std::size_t i = 0; i < slide.cell_count(); ++i)
    if (slide.tissue[i] && slide.grades[i] == Grade::normal) normals.push_back(slide.cell_at(i));
  if (n_normal > normals.size()) {
    out.normals_clipped = true;
    n_normal = normals.size();
  }
  for (std::size_t i = 0; i < n_normal; ++i) {
    std::swap(normals[i], normals[i + rng.below(normals.size() - i)]);
    out.patches.push_back({normals[i], Grade::normal});
  }
  return out;
}

struct LabeledFeatures {
  std::vector<double> features;
  Grade grade = Grade::normal;
};

struct ScorerTrainConfig {
  /// Samples drawn per class for each batch; batches hold 3x this many.
  std::size_t per_class_batch = 26;
  std::size_t iterations = 2000;
  double base_lr = 1e-3;
  double gamma = 0.9;
  std::size_t period = 2000;
  AdamSettings adam{};
  std::uint64_t seed = 0;
  bool record_batches = false;
};

class BalanceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScorerTrainResult {
  ScorerModel model;
  std::vector<double> loss;                                     // per iteration
  std::vector<std::array<std::size_t, kNumGrades>> batch_counts;  // when recorded
};

inline Matrix stack_features(const std::vector<LabeledFeatures>& samples, const std::vector<std::size_t>& idx) {
  Matrix x(idx.size(), samples[idx.front()].features.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& f = samples[idx[i]].features;
    if (f.size() != x.cols()) throw DimensionError("training sample feature length mismatch");
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  return x;
}

/// Adam on mean cross-entropy with every batch holding the same number of samples
/// of each class (drawn with replacement from that class's pool).
inline ScorerTrainResult train_scorer(const std::vector<LabeledFeatures>& samples, ScorerModel model,
                                      const ScorerTrainConfig& cfg) {
  std::array<std::vector<std::size_t>, kNumGrades> pools;
  for (std::size_t i = 0; i < samples.size(); ++i) pools[to_index(samples[i].grade)].push_back(i);
  for (auto g : kAllGrades)
    if (pools[to_index(g)].empty()) {
      throw BalanceError("train_scorer: no training samples of class " + std::string(grade_name(g)));
    }
  if (cfg.per_class_batch < 1) throw ConfigError("train_scorer: per_class_batch must be >= 1");

  Rng rng(cfg.seed);
  AdamState adam(model.params(), cfg.base_lr, cfg.adam);
  const LrSchedule schedule{cfg.base_lr, cfg.gamma, cfg.period};
  ScorerTrainResult result{std::move(model), {}, {}};
  result.loss.reserve(cfg.iterations);

  std::vector<std::size_t> batch;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    batch.clear();
    for (const auto& pool : pools)
      for (std::size_t k = 0; k < cfg.per_class_batch; ++k) batch.push_back(pool[rng.below(pool.size())]);
    if (cfg.record_batches) {
      std::array<std::size_t, kNumGrades> counts{};
      for (auto i : batch) ++counts[to_index(samples[i].grade)];
      result.batch_counts.push_back(counts);
    }
    const Matrix x = stack_features(samples, batch);
    const auto fwd = result.model.forward(x);
    Matrix dlogits(batch.size(), kNumGrades);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto ce = cross_entropy_probs(fwd.probs.row(i), samples[batch[i]].grade);
      loss += ce.loss * inv_b;
      for (std::size_t c = 0; c < kNumGrades; ++c) dlogits(i, c) = ce.grad_logits[c] * inv_b;
    }
    result.loss.push_back(loss);
    const auto grads = result.model.backward(x, fwd, dlogits);
    adam_step(result.model.params(), grads, adam, schedule_lr(schedule, it));
  }
  return result;
}

inline double scorer_accuracy(const ScorerModel& model, const std::vector<LabeledFeatures>& samples) {
  if (samples.empty()) return 0.0;
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Matrix p = model.probabilities(stack_features(samples, idx));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += predicted_grade(p.row(i)) == samples[i].grade;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Normal tissue cells whose predicted abnormal probability (dysplasia + cancer)
/// exceeds `threshold`, returned as extra grade-0 training patches.
inline std::vector<TrainingPatch> mine_hard_negatives(const PatchScorer& scorer, const SyntheticSlide& slide,
                                                      const FeatureModel* features, double threshold) {
  std::vector<TrainingPatch> out;
  for (std::size_t i = 0; i < slide.cell_count(); ++i) {
    if (!slide.tissue[i] || slide.grades[i] != Grade::normal) continue;
    const Cell c = slide.cell_at(i);
    std::vector<double> f;
    if (scorer.needs_features()) f = features->cell_features(slide, c);
    const auto p = scorer.score({slide, c, f});
    if (p[1] + p[2] > threshold) out.push_back({c, Grade::normal});
  }
  return out;
}

}  // namespace rmdl
