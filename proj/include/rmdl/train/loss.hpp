#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include "rmdl/numerics/layers.hpp"
#include "rmdl/slide/types.hpp"

namespace rmdl {

inline constexpr double kProbabilityFloor = 1e-12;

struct CrossEntropy {
  double loss = 0.0;
  std::array<double, kNumGrades> grad_logits{};  // softmax(z) - onehot(true)
  bool clamped = false;                          // probability input hit the floor
};

/// Fused softmax cross-entropy on logits: logsumexp(z) - z_true.
inline CrossEntropy cross_entropy_logits(std::span<const double> logits, Grade truth) {
  if (logits.size() != kNumGrades) throw DimensionError("cross_entropy: expected 3 logits");
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - zmax);
  CrossEntropy ce;
  ce.loss = std::log(total) + zmax - logits[to_index(truth)];
  const auto p = softmax(logits);
  for (std::size_t c = 0; c < kNumGrades; ++c) ce.grad_logits[c] = p[c] - (c == to_index(truth) ? 1.0 : 0.0);
  return ce;
}

/// -log p_true on a probability triple. A zero probability is clamped to 1e-12 and
/// flagged; the gradient is still expressed w.r.t. the logits behind `probs`.
inline CrossEntropy cross_entropy_probs(std::span<const double> probs, Grade truth) {
  if (probs.size() != kNumGrades) throw DimensionError("cross_entropy: expected 3 probabilities");
  CrossEntropy ce;
  double pt = probs[to_index(truth)];
  if (pt < kProbabilityFloor) {
    pt = kProbabilityFloor;
    ce.clamped = true;
  }
  ce.loss = -std::log(pt);
  for (std::size_t c = 0; c < kNumGrades; ++c) ce.grad_logits[c] = probs[c] - (c == to_index(truth) ? 1.0 : 0.0);
  return ce;
}

/// Predicted grade: argmax, ties toward the lower grade.
inline Grade predicted_grade(std::span<const double> probs) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c)
    if (probs[c] > probs[best]) best = c;
  return static_cast<Grade>(best);
}

}  // namespace rmdl
