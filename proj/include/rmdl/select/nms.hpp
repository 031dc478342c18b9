#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rmdl/slide/types.hpp"

namespace rmdl {

struct Candidate {
  Cell cell;
  double score = 0.0;
  Grade channel = Grade::normal;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Intersection area over patch area for two square patches of side `extent` cells
/// anchored at the given cells.
inline double patch_overlap(Cell a, Cell b, std::uint32_t extent) noexcept {
  auto axis = [extent](std::uint32_t p, std::uint32_t q) -> double {
    const std::uint32_t lo = std::max(p, q), hi = std::min(p, q) + extent;
    return hi > lo ? static_cast<double>(hi - lo) : 0.0;
  };
  const double e = static_cast<double>(extent);
  return axis(a.x, b.x) * axis(a.y, b.y) / (e * e);
}

/// Greedy non-maximum suppression: highest score first (ties in row-major cell order),
/// dropping candidates that overlap a kept one by more than `overlap_thresh`.
inline std::vector<Candidate> nms_select(std::vector<Candidate> candidates, double overlap_thresh, std::size_t k,
                                         std::uint32_t patch_extent) {
  if (patch_extent < 1) throw std::invalid_argument("nms_select: patch_extent must be >= 1");
  for (const auto& c : candidates)
    if (!std::isfinite(c.score)) throw std::invalid_argument("nms_select: non-finite candidate score");
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.cell < b.cell;
  });
  std::vector<Candidate> kept;
  for (const auto& c : candidates) {
    if (kept.size() >= k) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Candidate& s) {
      return patch_overlap(s.cell, c.cell, patch_extent) > overlap_thresh;
    });
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

}  // namespace rmdl
