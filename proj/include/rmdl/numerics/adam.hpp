#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "rmdl/numerics/parameter_set.hpp"

namespace rmdl {

/// Step-decay schedule: base_lr * gamma^floor(iteration / period).
struct LrSchedule {
  double base_lr = 1e-3;
  double gamma = 0.8;
  std::size_t period = 140;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw NumericError("LrSchedule: gamma must lie in (0, 1]");
    if (period < 1) throw NumericError("LrSchedule: period must be >= 1");
    if (!(base_lr >= 0.0)) throw NumericError("LrSchedule: base_lr must be >= 0");
  }
};

inline double schedule_lr(const LrSchedule& s, std::size_t iteration) {
  s.validate();
  const auto steps = iteration / s.period;
  double lr = s.base_lr;
  for (std::size_t i = 0; i < steps; ++i) lr *= s.gamma;
  return lr;
}

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Time-based decay: the step size is divided by (1 + decay * t).
  double decay = 0.001;
};

class AdamState {
 public:
  AdamState(const ParameterSet& like, double base_lr, AdamSettings settings = {})
      : settings_(settings), base_lr_(base_lr), first_(like.zeros_like()), second_(like.zeros_like()) {
    if (!(settings.beta1 > 0.0 && settings.beta1 < 1.0 && settings.beta2 > 0.0 && settings.beta2 < 1.0)) {
      throw NumericError("AdamState: betas must lie in (0, 1)");
    }
  }

  std::size_t step() const noexcept { return step_; }
  double base_lr() const noexcept { return base_lr_; }
  const AdamSettings& settings() const noexcept { return settings_; }
  const ParameterSet& first_moment() const noexcept { return first_; }
  const ParameterSet& second_moment() const noexcept { return second_; }

  /// One bias-corrected Adam update. `scheduled_lr` replaces base_lr when given
  /// (the caller's LrSchedule value); time-based decay is applied on top.
  void apply(ParameterSet& params, const ParameterSet& grads, std::optional<double> scheduled_lr = {}) {
    params.require_same_layout(grads, "adam_step");
    params.require_same_layout(first_, "adam_step");
    for (const auto& b : grads.blocks()) {
      if (!b.value.all_finite()) throw NumericError("adam_step: non-finite gradient in block '" + b.name + "'");
    }
    const auto t = static_cast<double>(step_ + 1);
    const double lr = scheduled_lr.value_or(base_lr_) / (1.0 + settings_.decay * t);
    const double c1 = 1.0 - std::pow(settings_.beta1, t);
    const double c2 = 1.0 - std::pow(settings_.beta2, t);
    for (std::size_t bi = 0; bi < params.blocks().size(); ++bi) {
      auto p = params.blocks()[bi].value.flat();
      const auto g = grads.blocks()[bi].value.flat();
      auto m = first_.blocks()[bi].value.flat();
      auto v = second_.blocks()[bi].value.flat();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g[i];
        v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + settings_.epsilon);
      }
    }
    ++step_;
  }

 private:
  AdamSettings settings_;
  double base_lr_;
  std::size_t step_ = 0;
  ParameterSet first_;
  ParameterSet second_;
};

inline void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state,
                      std::optional<double> scheduled_lr = {}) {
  state.apply(params, grads, scheduled_lr);
}

}  // namespace rmdl
