#pragma once

// Brute-force reference implementations. Each one recomputes its quantity directly
// from the definition and shares no code path with the library routine it checks.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace rmdl::oracle {

/// Otsu by direct recomputation of both class statistics for every t in [0, 256).
inline int otsu_exhaustive(const std::array<std::uint64_t, 256>& h) {
  int best_t = 0;
  double best = -1.0;
  for (int t = 0; t < 256; ++t) {
    std::uint64_t w0 = 0, s0 = 0, w1 = 0, s1 = 0;
    for (int i = 0; i < t; ++i) {
      w0 += h[i];
      s0 += h[i] * static_cast<std::uint64_t>(i);
    }
    for (int i = t; i < 256; ++i) {
      w1 += h[i];
      s1 += h[i] * static_cast<std::uint64_t>(i);
    }
    double v = 0.0;
    if (w0 != 0 && w1 != 0) {
      const double d = static_cast<double>(s0) / static_cast<double>(w0) - static_cast<double>(s1) / static_cast<double>(w1);
      v = static_cast<double>(w0) * static_cast<double>(w1) * d * d;
    }
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  return best_t;
}

/// Number of patch origins {0, S, 2S, ...} owned by one block: those that start
/// before the next block's origin (I - N + S). Counted one by one.
inline long count_block_positions(long block, long patch, long stride) {
  const long next_block = block - patch + stride;
  long n = 0;
  for (long p = 0; p < next_block; p += stride) ++n;
  return n;
}

/// Greedy NMS written as the textbook loop over a score-sorted list.
struct BoxCandidate {
  long x, y;
  double score;
};

inline double overlap_ratio(const BoxCandidate& a, const BoxCandidate& b, long extent) {
  const long ix = std::max(0L, std::min(a.x, b.x) + extent - std::max(a.x, b.x));
  const long iy = std::max(0L, std::min(a.y, b.y) + extent - std::max(a.y, b.y));
  return static_cast<double>(ix * iy) / static_cast<double>(extent * extent);
}

inline std::vector<BoxCandidate> greedy_nms(std::vector<BoxCandidate> c, double thresh, long extent, std::size_t k) {
  std::stable_sort(c.begin(), c.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  std::vector<BoxCandidate> kept;
  std::vector<bool> removed(c.size(), false);
  for (std::size_t i = 0; i < c.size() && kept.size() < k; ++i) {
    if (removed[i]) continue;
    kept.push_back(c[i]);
    for (std::size_t j = i + 1; j < c.size(); ++j)
      if (!removed[j] && overlap_ratio(c[i], c[j], extent) > thresh) removed[j] = true;
  }
  return kept;
}

/// AUC as the mean over all positive/negative pairs of [s+ > s-] + 0.5 [s+ == s-].
inline std::optional<double> pairwise_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) total += 1.0;
      else if (scores[i] == scores[j]) total += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return total / static_cast<double>(pairs);
}

/// Ordinal point rule summed slide by slide.
inline double score_by_points(const std::vector<int>& truth, const std::vector<int>& pred) {
  long points = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int d = truth[i] > pred[i] ? truth[i] - pred[i] : pred[i] - truth[i];
    if (d == 0) points += 2;
    else if (d == 1) points += 1;
    else points -= 1;
  }
  return static_cast<double>(points) / static_cast<double>(2 * truth.size());
}

}  // namespace rmdl::oracle
