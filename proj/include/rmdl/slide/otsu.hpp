#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace rmdl {

using Histogram256 = std::array<std::uint64_t, 256>;

class DegenerateHistogramError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Between-class variance (up to the constant 1/total^2) of splitting a histogram
/// into bins [0, t) and [t, 256), given the class counts and index-weighted sums.
inline double between_class_variance(double w0, double s0, double w1, double s1) noexcept {
  if (w0 == 0.0 || w1 == 0.0) return 0.0;
  const double diff = s0 / w0 - s1 / w1;
  return w0 * w1 * diff * diff;
}

/// Otsu threshold. Returns t such that bins below t form the dark class. The maximum
/// between-class variance wins; ties resolve to the smallest t.
inline int otsu_threshold(const Histogram256& histogram) {
  std::uint64_t total = 0;
  std::uint64_t total_sum = 0;
  int nonempty = 0;
  for (int i = 0; i < 256; ++i) {
    total += histogram[i];
    total_sum += histogram[i] * static_cast<std::uint64_t>(i);
    if (histogram[i] != 0) ++nonempty;
  }
  if (total == 0) throw DegenerateHistogramError("otsu_threshold: empty histogram");
  if (nonempty < 2) throw DegenerateHistogramError("otsu_threshold: histogram has a single nonempty bin");

  // Running class statistics stay exact integers.
  std::uint64_t w0 = 0;
  std::uint64_t s0 = 0;
  int best_t = 0;
  double best = -1.0;
  for (int t = 0; t < 256; ++t) {
    const double v = between_class_variance(static_cast<double>(w0), static_cast<double>(s0),
                                            static_cast<double>(total - w0),
                                            static_cast<double>(total_sum - s0));
    if (v > best) {
      best = v;
      best_t = t;
    }
    w0 += histogram[t];
    s0 += histogram[t] * static_cast<std::uint64_t>(t);
  }
  return best_t;
}

/// Histogram of intensities in [0, 1] quantized to 256 levels.
inline std::uint8_t quantize_gray(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(v * 255.0 + 0.5);
}

inline Histogram256 gray_histogram(std::span<const double> gray) {
  Histogram256 h{};
  for (double v : gray) ++h[quantize_gray(v)];
  return h;
}

}  // namespace rmdl
