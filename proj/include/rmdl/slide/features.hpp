#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rmdl/numerics/matrix.hpp"
#include "rmdl/numerics/rng.hpp"
#include "rmdl/slide/slide.hpp"

namespace rmdl {

/// Class-prototype feature generator standing in for a backbone's patch embeddings.
///
/// Prototypes are drawn once from the dataset seed. Each cell's features are
/// prototype[grade] + noise, except that with probability `confuser_rate` an
/// adjacent grade's prototype is used.
class FeatureModel {
 public:
  explicit FeatureModel(const SlideGenConfig& cfg)
      : dim_(cfg.feature_dim), noise_(cfg.noise), confuser_rate_(cfg.confuser_rate),
        seed_(derive_seed(cfg.seed, 0xFEA7ULL)), prototypes_(kNumGrades, cfg.feature_dim) {
    Rng rng(seed_);
    for (double& v : prototypes_.flat()) v = rng.normal();
    double min_dist = INFINITY;
    for (std::size_t a = 0; a < kNumGrades; ++a)
      for (std::size_t b = a + 1; b < kNumGrades; ++b) min_dist = std::min(min_dist, distance(a, b));
    const double scale = cfg.prototype_separation / min_dist;
    for (double& v : prototypes_.flat()) v *= scale;
  }

  FeatureModel(Matrix prototypes, double noise, double confuser_rate, std::uint64_t seed)
      : dim_(static_cast<std::uint32_t>(prototypes.cols())), noise_(noise), confuser_rate_(confuser_rate),
        seed_(seed), prototypes_(std::move(prototypes)) {
    if (prototypes_.rows() != kNumGrades) {
      throw DimensionError("FeatureModel: prototypes must have 3 rows, got " + prototypes_.shape());
    }
  }

  std::uint32_t dim() const noexcept { return dim_; }
  double noise() const noexcept { return noise_; }
  double confuser_rate() const noexcept { return confuser_rate_; }
  const Matrix& prototypes() const noexcept { return prototypes_; }
  std::span<const double> prototype(Grade g) const noexcept { return prototypes_.row(to_index(g)); }

  /// The grade whose prototype a cell of grade `g` will present.
  Grade presented_grade(Grade g, Rng& rng) const noexcept {
    if (confuser_rate_ <= 0.0 || !rng.bernoulli(confuser_rate_)) return g;
    switch (g) {
      case Grade::normal: return Grade::dysplasia;
      case Grade::cancer: return Grade::dysplasia;
      case Grade::dysplasia: return rng.bernoulli(0.5) ? Grade::normal : Grade::cancer;
    }
    return g;
  }

  /// Features for `cell` drawn from `rng`.
  std::vector<double> sample(const SyntheticSlide& slide, Cell cell, Rng& rng) const {
    const Grade shown = presented_grade(slide.grade_at(cell), rng);
    const auto proto = prototype(shown);
    std::vector<double> f(proto.begin(), proto.end());
    if (noise_ > 0.0)
      for (double& v : f) v += noise_ * rng.normal();
    return f;
  }

  /// Deterministic features of a cell: the stream derives from (dataset, slide, cell).
  std::vector<double> cell_features(const SyntheticSlide& slide, Cell cell) const {
    Rng rng(derive_seed(derive_seed(seed_, slide.seed), slide.index(cell)));
    return sample(slide, cell, rng);
  }

 private:
  double distance(std::size_t a, std::size_t b) const {
    double d = 0.0;
    for (std::size_t k = 0; k < prototypes_.cols(); ++k) {
      const double t = prototypes_(a, k) - prototypes_(b, k);
      d += t * t;
    }
    return std::sqrt(d);
  }

  std::uint32_t dim_;
  double noise_;
  double confuser_rate_;
  std::uint64_t seed_;
  Matrix prototypes_;
};

inline std::vector<double> synth_features(const SyntheticSlide& slide, Cell cell, const FeatureModel& model,
                                          Rng& rng) {
  if (!slide.contains(cell)) throw std::out_of_range("synth_features: cell outside the slide grid");
  return model.sample(slide, cell, rng);
}

}  // namespace rmdl
