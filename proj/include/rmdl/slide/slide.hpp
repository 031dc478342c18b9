#pragma once

// Synthetic whole-slide surrogate: a G x G lattice of cells with a tissue region
// and planted abnormal blobs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "rmdl/numerics/rng.hpp"
#include "rmdl/slide/otsu.hpp"
#include "rmdl/slide/types.hpp"

namespace rmdl {

struct SlideGenConfig {
  std::uint32_t side = 64;
  double abnormal_fraction = 0.05;
  std::uint32_t n_blobs = 3;
  std::array<double, kNumGrades> class_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  /// Per-dimension standard deviation of feature noise.
  double noise = 0.25;
  /// Probability that a cell's features come from an adjacent grade's prototype.
  double confuser_rate = 0.15;
  std::uint32_t feature_dim = 32;
  /// Minimum pairwise distance between grade prototypes.
  double prototype_separation = 2.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (side < 8) throw ConfigError("slide side must be >= 8");
    if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0))
      throw ConfigError("abnormal_fraction must lie in (0, 1)");
    if (n_blobs < 1) throw ConfigError("n_blobs must be >= 1");
    double total = 0.0;
    for (double p : class_mix) {
      if (!(p >= 0.0)) throw ConfigError("class_mix entries must be >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("class_mix must sum to 1");
    if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
    if (!(confuser_rate >= 0.0 && confuser_rate <= 1.0)) throw ConfigError("confuser_rate must lie in [0, 1]");
    if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
    if (!(prototype_separation > 0.0)) throw ConfigError("prototype_separation must be > 0");
  }

  friend bool operator==(const SlideGenConfig&, const SlideGenConfig&) = default;
};

struct SyntheticSlide {
  std::string id;
  std::uint64_t seed = 0;
  std::uint32_t side = 0;
  Grade label = Grade::normal;
  std::vector<Grade> grades;          // side*side, row-major
  std::vector<std::uint8_t> tissue;   // 1 = tissue
  std::vector<double> gray;           // rendered intensity in [0, 1]

  std::size_t index(Cell c) const noexcept { return static_cast<std::size_t>(c.y) * side + c.x; }
  Cell cell_at(std::size_t i) const noexcept {
    return {static_cast<std::uint32_t>(i % side), static_cast<std::uint32_t>(i / side)};
  }
  bool contains(Cell c) const noexcept { return c.x < side && c.y < side; }
  Grade grade_at(Cell c) const noexcept { return grades[index(c)]; }
  bool is_tissue(Cell c) const noexcept { return tissue[index(c)] != 0; }
  std::size_t cell_count() const noexcept { return grades.size(); }

  std::size_t tissue_count() const noexcept {
    return static_cast<std::size_t>(std::count(tissue.begin(), tissue.end(), std::uint8_t{1}));
  }
  std::size_t abnormal_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t i = 0; i < grades.size(); ++i)
      if (tissue[i] && grades[i] != Grade::normal) ++n;
    return n;
  }

  friend bool operator==(const SyntheticSlide&, const SyntheticSlide&) = default;
};

namespace detail {

struct Ellipse {
  double cx, cy, ax, ay;
  bool contains(double x, double y) const noexcept {
    const double dx = (x - cx) / ax;
    const double dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  }
};

inline std::vector<std::size_t> ellipse_cells(const Ellipse& e, std::uint32_t side) {
  std::vector<std::size_t> cells;
  const auto lo_y = static_cast<long>(std::floor(e.cy - e.ay));
  const auto hi_y = static_cast<long>(std::ceil(e.cy + e.ay));
  const auto lo_x = static_cast<long>(std::floor(e.cx - e.ax));
  const auto hi_x = static_cast<long>(std::ceil(e.cx + e.ax));
  for (long y = std::max(0L, lo_y); y <= std::min<long>(side - 1, hi_y); ++y)
    for (long x = std::max(0L, lo_x); x <= std::min<long>(side - 1, hi_x); ++x)
      if (e.contains(static_cast<double>(x), static_cast<double>(y)))
        cells.push_back(static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x));
  return cells;
}

/// Scale for an ellipse of the given aspect ratio whose lattice footprint (centered on
/// a cell) is closest to `target` cells.
inline double blob_scale_for_area(double aspect, std::size_t target) {
  const double sa = std::sqrt(aspect);
  auto count = [&](double s) {
    Ellipse e{0.0, 0.0, s * sa, s / sa};
    const auto r = static_cast<long>(std::ceil(std::max(e.ax, e.ay))) + 1;
    std::size_t n = 0;
    for (long y = -r; y <= r; ++y)
      for (long x = -r; x <= r; ++x)
        if (e.contains(static_cast<double>(x), static_cast<double>(y))) ++n;
    return n;
  };
  double lo = 0.1;
  double hi = 1.0 + std::sqrt(static_cast<double>(target));
  for (int i = 0; i < 50; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (count(mid) < target) lo = mid;
    else hi = mid;
  }
  const auto under = count(lo);
  const auto over = count(hi);
  const auto dist = [&](std::size_t n) { return n > target ? n - target : target - n; };
  return dist(under) < dist(over) ? lo : hi;
}

}  // namespace detail

/// Draws one slide. The result is a pure function of (cfg, rng state).
///
/// Tissue is an ellipse rendered darker than the background; the tissue mask is
/// recovered from the rendering with Otsu's threshold. Abnormal blobs are
/// axis-aligned ellipses placed inside tissue.
inline SyntheticSlide generate_slide(const SlideGenConfig& cfg, Rng& rng, std::string id = {}) {
  cfg.validate();
  const std::uint32_t g = cfg.side;
  SyntheticSlide slide;
  slide.id = std::move(id);
  slide.seed = rng.seed();
  slide.side = g;
  slide.grades.assign(static_cast<std::size_t>(g) * g, Grade::normal);
  slide.tissue.assign(slide.grades.size(), 0);
  slide.gray.assign(slide.grades.size(), 0.0);

  // Tissue region.
  const double gd = static_cast<double>(g);
  const double c = (gd - 1.0) / 2.0;
  detail::Ellipse tissue_shape{c + rng.uniform(-0.05, 0.05) * gd, c + rng.uniform(-0.05, 0.05) * gd,
                               rng.uniform(0.30, 0.42) * gd, rng.uniform(0.30, 0.42) * gd};
  for (std::size_t i = 0; i < slide.gray.size(); ++i) {
    const Cell cell = slide.cell_at(i);
    const bool inside = tissue_shape.contains(cell.x, cell.y);
    slide.gray[i] = inside ? 0.55 + rng.uniform(-0.08, 0.08) : 0.88 + rng.uniform(-0.05, 0.05);
  }
  const int threshold = otsu_threshold(gray_histogram(slide.gray));
  for (std::size_t i = 0; i < slide.gray.size(); ++i)
    slide.tissue[i] = quantize_gray(slide.gray[i]) < threshold ? 1 : 0;

  // Slide label.
  const double u = rng.uniform();
  Grade label = Grade::cancer;
  if (u < cfg.class_mix[0]) label = Grade::normal;
  else if (u < cfg.class_mix[0] + cfg.class_mix[1]) label = Grade::dysplasia;
  if (cfg.class_mix[to_index(label)] == 0.0) {
    // Rounding at the top end of the cumulative sum; fall back to the last class with mass.
    for (auto gr : kAllGrades)
      if (cfg.class_mix[to_index(gr)] > 0.0) label = gr;
  }

  if (label != Grade::normal) {
    const std::size_t tissue_cells = slide.tissue_count();
    const auto target = static_cast<std::size_t>(std::llround(cfg.abnormal_fraction * static_cast<double>(tissue_cells)));
    if (target < cfg.n_blobs) {
      throw ConfigError("abnormal_fraction " + std::to_string(cfg.abnormal_fraction) + " with " +
                        std::to_string(cfg.n_blobs) + " blobs is infeasible for a " + std::to_string(g) +
                        "-cell slide");
    }
    std::vector<std::size_t> tissue_idx;
    for (std::size_t i = 0; i < slide.tissue.size(); ++i)
      if (slide.tissue[i]) tissue_idx.push_back(i);

    for (std::uint32_t b = 0; b < cfg.n_blobs; ++b) {
      const std::size_t blob_target = target / cfg.n_blobs + (b < target % cfg.n_blobs ? 1 : 0);
      Grade blob_grade = label;
      if (label == Grade::cancer && b > 0 && rng.bernoulli(0.5)) blob_grade = Grade::dysplasia;

      const double aspect = rng.uniform(0.6, 1.6);
      const double scale = detail::blob_scale_for_area(aspect, blob_target);
      const double sa = std::sqrt(aspect);

      // Prefer placements fully inside tissue and disjoint from earlier blobs.
      std::vector<std::size_t> best;
      std::size_t best_free = 0;
      for (int attempt = 0; attempt < 200; ++attempt) {
        const Cell center = slide.cell_at(tissue_idx[rng.below(tissue_idx.size())]);
        detail::Ellipse e{static_cast<double>(center.x), static_cast<double>(center.y), scale * sa, scale / sa};
        auto cells = detail::ellipse_cells(e, g);
        std::size_t free = 0;
        for (auto i : cells)
          if (slide.tissue[i] && slide.grades[i] == Grade::normal) ++free;
        if (free > best_free || best.empty()) {
          best_free = free;
          best = std::move(cells);
        }
        if (best_free == best.size()) break;
      }
      for (auto i : best)
        if (slide.tissue[i] && to_int(blob_grade) > to_int(slide.grades[i])) slide.grades[i] = blob_grade;
    }

    const double realized = static_cast<double>(slide.abnormal_count());
    const double wanted = static_cast<double>(target);
    if (realized < 0.7 * wanted || realized > 1.3 * wanted) {
      throw ConfigError("abnormal_fraction " + std::to_string(cfg.abnormal_fraction) +
                        " could not be realized on a " + std::to_string(g) + "-cell slide");
    }
  }

  slide.label = Grade::normal;
  for (std::size_t i = 0; i < slide.grades.size(); ++i)
    if (slide.tissue[i] && to_int(slide.grades[i]) > to_int(slide.label)) slide.label = slide.grades[i];
  return slide;
}

/// Slide `index` of a dataset: each slide draws from its own sub-seed.
inline SyntheticSlide generate_dataset_slide(const SlideGenConfig& cfg, std::uint64_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  char buf[32];
  std::snprintf(buf, sizeof buf, "slide_%05llu", static_cast<unsigned long long>(index));
  return generate_slide(cfg, rng, buf);
}

}  // namespace rmdl
