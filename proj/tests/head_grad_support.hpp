#pragma once

// Finite-difference checking of the MIL heads, shared by the unit suite and the
// acceptance runner.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "rmdl/head/head.hpp"
#include "rmdl/numerics/grad_check.hpp"
#include "test_support.hpp"

namespace rmdl::test {

inline constexpr double kStep = 3e-4;
inline constexpr double kWideStep = 1e-1;

// Distance of a bag from the nearest non-differentiable point of the head: leaky-ReLU
// inputs near zero and max-pool columns whose top two entries nearly tie.
inline double kink_margin(const Head& head, const Matrix& u, std::optional<std::uint64_t> dropout_seed = {}) {
  double margin = std::numeric_limits<double>::infinity();
  auto top_gap = [&](const Matrix& x) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double a = -std::numeric_limits<double>::infinity(), b = a;
      for (std::size_t i = 0; i < x.rows(); ++i) {
        const double v = x(i, j);
        if (v > a) {
          b = a;
          a = v;
        } else if (v > b) {
          b = v;
        }
      }
      if (x.rows() > 1) margin = std::min(margin, a - b);
    }
  };
  Rng drop(dropout_seed.value_or(0));
  const auto c = head.forward(u, dropout_seed ? Mode::train : Mode::eval, drop).cache;
  if (head.config().uses_recalibration()) {
    for (double v : c.n1.y.flat()) margin = std::min(margin, std::abs(v));
    for (double v : c.n2.y.flat()) margin = std::min(margin, std::abs(v));
  }
  if (head.config().kind == HeadKind::max) top_gap(u);
  return margin;
}

/// A random bag at least 5e-3 from every kink, so a 3e-4 step never crosses one.
inline Matrix smooth_bag(const Head& head, Rng& rng, std::size_t m, std::size_t D,
                         std::optional<std::uint64_t> dropout_seed = {}) {
  for (;;) {
    Matrix u = random_matrix(m, D, rng);
    if (kink_margin(head, u, dropout_seed) >= 5e-3) return u;
  }
}

// Recalibration logits enter a softmax over instances, so the bias and the weights on
// the tiled global part shift every logit equally and never change the loss. Their
// derivative is exactly zero; a wide step keeps the difference quotient at roundoff.
inline bool shift_invariant(const HeadConfig& cfg, const std::string& block, std::size_t index) {
  if (block == "recal.bias" || block == "attention.b") return true;
  return block == "recal.weight" && index >= cfg.d3;
}

struct HeadGradReport {
  double max_rel_error = 0.0;
  std::string worst;               // "block[index]: analytic vs numeric"
  double max_invariant_abs = 0.0;  // largest |analytic| on a shift-invariant coordinate
};

/// Checks every parameter block, with `loss` evaluated on a modified copy of `head`.
inline HeadGradReport head_gradient_report(const Head& head, const ParameterSet& grads,
                                           const std::function<double(const Head&)>& loss) {
  HeadGradReport rep;
  for (std::size_t b = 0; b < head.params().blocks().size(); ++b) {
    const auto& block = head.params().blocks()[b];
    const auto analytic = grads.blocks()[b].value.flat();
    for (bool wide : {false, true}) {
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k < block.value.size(); ++k)
        if (shift_invariant(head.config(), block.name, k) == wide) idx.push_back(k);
      if (idx.empty()) continue;
      std::vector<double> x, a;
      for (auto k : idx) {
        x.push_back(block.value.flat()[k]);
        a.push_back(analytic[k]);
        if (wide) rep.max_invariant_abs = std::max(rep.max_invariant_abs, std::abs(analytic[k]));
      }
      auto f = [&](std::span<const double> v) {
        Head probe = head;
        auto dst = probe.params().blocks()[b].value.flat();
        for (std::size_t i = 0; i < idx.size(); ++i) dst[idx[i]] = v[i];
        return loss(probe);
      };
      const auto r = grad_check(f, x, a, wide ? kWideStep : kStep);
      if (r.max_rel_error > rep.max_rel_error || rep.worst.empty()) {
        rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
        rep.worst = block.name + "[" + std::to_string(idx[r.worst_index]) + "]: analytic " +
                    std::to_string(r.analytic_at_worst) + " vs numeric " + std::to_string(r.numeric_at_worst);
      }
    }
  }
  return rep;
}

}  // namespace rmdl::test
