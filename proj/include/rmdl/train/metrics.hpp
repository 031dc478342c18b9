#pragma once

// Slide-level evaluation: accuracy, the ordinal point score, confusion matrix and
// one-vs-rest ROC/AUC.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rmdl/slide/types.hpp"

namespace rmdl {

struct SlidePrediction {
  std::string id;
  Grade truth = Grade::normal;
  Grade predicted = Grade::normal;
  std::array<double, kNumGrades> probs{};
};

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_nonempty(const std::vector<SlidePrediction>& s, const char* what) {
  if (s.empty()) throw MetricError(std::string(what) + ": no slides");
}

inline double accuracy(const std::vector<SlidePrediction>& slides) {
  require_nonempty(slides, "accuracy");
  std::size_t correct = 0;
  for (const auto& s : slides) correct += s.truth == s.predicted;
  return static_cast<double>(correct) / static_cast<double>(slides.size());
}

/// 2 points for an exact grade, 1 for a neighbouring grade, -1 for normal/cancer confusion.
inline int grade_points(int truth, int predicted) {
  for (int g : {truth, predicted})
    if (g < 0 || g >= static_cast<int>(kNumGrades)) throw MetricError("grade " + std::to_string(g) + " outside {0,1,2}");
  switch (std::abs(truth - predicted)) {
    case 0: return 2;
    case 1: return 1;
    default: return -1;
  }
}

/// Total points divided by the all-correct total 2n; lies in [-0.5, 1].
inline double average_classification_score(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw MetricError("average_classification_score: length mismatch");
  if (truth.empty()) throw MetricError("average_classification_score: no slides");
  long points = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) points += grade_points(truth[i], predicted[i]);
  return static_cast<double>(points) / (2.0 * static_cast<double>(truth.size()));
}

inline double average_classification_score(const std::vector<SlidePrediction>& slides) {
  std::vector<int> t, p;
  for (const auto& s : slides) {
    t.push_back(to_int(s.truth));
    p.push_back(to_int(s.predicted));
  }
  return average_classification_score(t, p);
}

using Confusion = std::array<std::array<std::size_t, kNumGrades>, kNumGrades>;  // [truth][predicted]

inline Confusion confusion_matrix(const std::vector<SlidePrediction>& slides) {
  require_nonempty(slides, "confusion_matrix");
  Confusion c{};
  for (const auto& s : slides) ++c[to_index(s.truth)][to_index(s.predicted)];
  return c;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // score >= threshold is called positive
};

struct RocCurve {
  std::optional<double> auc;  // absent when a class has no positives or no negatives
  std::vector<RocPoint> points;
};

/// AUC from average ranks: (R+ - n+(n+ + 1)/2) / (n+ n-), ties sharing their mean rank.
inline std::optional<double> rank_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += mean_rank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

/// Exact staircase: one point per distinct score, from (0, 0) at +inf down to (1, 1).
inline std::vector<RocPoint> roc_points(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const auto n_neg = static_cast<double>(positive.size()) - n_pos;
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == t; ++i) (positive[order[i]] ? tp : fp) += 1.0;
    pts.push_back({n_neg > 0 ? fp / n_neg : 0.0, n_pos > 0 ? tp / n_pos : 0.0, t});
  }
  return pts;
}

inline std::array<RocCurve, kNumGrades> roc_auc_ovr(const std::vector<SlidePrediction>& slides) {
  require_nonempty(slides, "roc_auc_ovr");
  std::array<RocCurve, kNumGrades> out;
  for (auto g : kAllGrades) {
    std::vector<double> scores;
    std::vector<bool> positive;
    for (const auto& s : slides) {
      scores.push_back(s.probs[to_index(g)]);
      positive.push_back(s.truth == g);
    }
    out[to_index(g)] = {rank_auc(scores, positive), roc_points(scores, positive)};
  }
  return out;
}

struct EvalReport {
  std::string model;
  double accuracy = 0.0;
  double avg_score = 0.0;
  Confusion confusion{};
  std::array<RocCurve, kNumGrades> roc;
  std::vector<SlidePrediction> per_slide;
};

inline EvalReport make_report(std::string model, std::vector<SlidePrediction> slides) {
  EvalReport r;
  r.model = std::move(model);
  r.accuracy = accuracy(slides);
  r.avg_score = average_classification_score(slides);
  r.confusion = confusion_matrix(slides);
  r.roc = roc_auc_ovr(slides);
  r.per_slide = std::move(slides);
  return r;
}

}  // namespace rmdl
