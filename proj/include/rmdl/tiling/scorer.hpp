#pragma once

// Patch scorers: the per-cell 3-class classifier that produces probability maps.

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>

#include <json.hpp>

#include "rmdl/numerics/layers.hpp"
#include "rmdl/numerics/parameter_set.hpp"
#include "rmdl/slide/slide.hpp"

namespace rmdl {

using ClassProbs = std::array<double, kNumGrades>;

struct CellContext {
  const SyntheticSlide& slide;
  Cell cell;
  std::span<const double> features;  // empty when the scorer does not need features
};

class PatchScorer {
 public:
  virtual ~PatchScorer() = default;
  virtual ClassProbs score(const CellContext& ctx) const = 0;
  virtual bool needs_features() const { return true; }
};

/// Reads the true grade. Used for geometry-only runs and tests.
class OracleScorer final : public PatchScorer {
 public:
  ClassProbs score(const CellContext& ctx) const override {
    ClassProbs p{};
    p[to_index(ctx.slide.grade_at(ctx.cell))] = 1.0;
    return p;
  }
  bool needs_features() const override { return false; }
};

enum class ScorerKind { linear, mlp };

inline std::string_view scorer_kind_name(ScorerKind k) { return k == ScorerKind::linear ? "linear" : "mlp"; }

inline ScorerKind scorer_kind_from_name(std::string_view s) {
  if (s == "linear") return ScorerKind::linear;
  if (s == "mlp") return ScorerKind::mlp;
  throw std::invalid_argument("unknown scorer kind '" + std::string(s) + "'");
}

/// Trainable softmax classifier over cell features: linear, or one leaky-ReLU hidden layer.
class ScorerModel final : public PatchScorer {
 public:
  static constexpr double kLeakyAlpha = 0.2;

  ScorerModel(ScorerKind kind, std::size_t dim, std::size_t hidden, Rng& rng) : kind_(kind) {
    if (kind == ScorerKind::linear) {
      params_.add("weight", Matrix(dim, kNumGrades));
      params_.add("bias", Matrix(1, kNumGrades));
    } else {
      const double s1 = std::sqrt(6.0 / static_cast<double>(dim + hidden));
      Matrix w1(dim, hidden);
      for (double& v : w1.flat()) v = rng.uniform(-s1, s1);
      const double s2 = std::sqrt(6.0 / static_cast<double>(hidden + kNumGrades));
      Matrix w2(hidden, kNumGrades);
      for (double& v : w2.flat()) v = rng.uniform(-s2, s2);
      params_.add("hidden.weight", std::move(w1));
      params_.add("hidden.bias", Matrix(1, hidden));
      params_.add("out.weight", std::move(w2));
      params_.add("out.bias", Matrix(1, kNumGrades));
    }
  }

  ScorerModel(ScorerKind kind, ParameterSet params) : kind_(kind), params_(std::move(params)) {}

  ScorerKind kind() const noexcept { return kind_; }
  std::size_t dim() const { return params_.blocks().front().value.rows(); }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  ClassProbs score(const CellContext& ctx) const override {
    const auto p = probabilities(Matrix::row_vector(ctx.features));
    return {p(0, 0), p(0, 1), p(0, 2)};
  }

  struct Forward {
    Matrix hidden_pre;  // mlp only
    Matrix hidden;
    Matrix probs;
  };

  Forward forward(const Matrix& x) const {
    Forward f;
    if (kind_ == ScorerKind::linear) {
      f.probs = softmax_rows(dense_apply(x, params_["weight"], params_["bias"].flat()));
    } else {
      f.hidden_pre = dense_apply(x, params_["hidden.weight"], params_["hidden.bias"].flat());
      f.hidden = leaky_relu(f.hidden_pre, kLeakyAlpha);
      f.probs = softmax_rows(dense_apply(f.hidden, params_["out.weight"], params_["out.bias"].flat()));
    }
    return f;
  }

  Matrix probabilities(const Matrix& x) const { return forward(x).probs; }

  /// Gradients given d(loss)/d(logits).
  ParameterSet backward(const Matrix& x, const Forward& f, const Matrix& dlogits) const {
    ParameterSet g = params_.zeros_like();
    if (kind_ == ScorerKind::linear) {
      auto d = dense_backward(x, params_["weight"], dlogits);
      g["weight"] = std::move(d.dweights);
      g["bias"] = std::move(d.dbias);
    } else {
      auto d2 = dense_backward(f.hidden, params_["out.weight"], dlogits);
      g["out.weight"] = std::move(d2.dweights);
      g["out.bias"] = std::move(d2.dbias);
      const Matrix dh = leaky_relu_backward(f.hidden_pre, d2.dx, kLeakyAlpha);
      auto d1 = dense_backward(x, params_["hidden.weight"], dh);
      g["hidden.weight"] = std::move(d1.dweights);
      g["hidden.bias"] = std::move(d1.dbias);
    }
    return g;
  }

 private:
  ScorerKind kind_;
  ParameterSet params_;
};

inline nlohmann::json to_json(const ScorerModel& m) {
  return {{"format", "rmdl-scorer"}, {"kind", scorer_kind_name(m.kind())}, {"params", to_json(m.params())}};
}

inline ScorerModel scorer_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rmdl-scorer") throw std::invalid_argument("not a scorer document");
  return ScorerModel(scorer_kind_from_name(j.at("kind").get<std::string>()), parameter_set_from_json(j.at("params")));
}

}  // namespace rmdl
