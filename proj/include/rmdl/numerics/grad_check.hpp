#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rmdl/numerics/matrix.hpp"

namespace rmdl {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares an analytic gradient of a scalar function with central differences.
///
/// Per coordinate the error is |a - n| / max(|a|, |n|, 1e-8); the maximum is returned.
/// The function must be deterministic: it is evaluated twice at the unperturbed point
/// and the two results must agree bit for bit.
inline GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> params, std::span<const double> analytic,
                                  double h = 1e-6) {
  if (analytic.size() != params.size()) {
    throw DimensionError("grad_check: " + std::to_string(params.size()) + " parameters vs " +
                         std::to_string(analytic.size()) + " gradient entries");
  }
  std::vector<double> x(params.begin(), params.end());
  const double f0 = f(x);
  const double f1 = f(x);
  if (std::bit_cast<std::uint64_t>(f0) != std::bit_cast<std::uint64_t>(f1)) {
    throw NumericError("grad_check: function is not deterministic");
  }
  GradCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    if (!(err <= result.max_rel_error)) {
      result = {err, i, a, numeric};
    }
  }
  return result;
}

}  // namespace rmdl
