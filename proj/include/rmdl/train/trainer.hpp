#pragma once

// Head training (Adam, step schedule, with-replacement batches, optional instance
// permutation) and slide-level evaluation.

#include <exception>
#include <thread>
#include <vector>

#include "rmdl/head/head.hpp"
#include "rmdl/numerics/adam.hpp"
#include "rmdl/select/instance_bag.hpp"
#include "rmdl/train/loss.hpp"
#include "rmdl/train/metrics.hpp"

namespace rmdl {

struct TrainConfig {
  double base_lr = 1e-3;
  double gamma = 0.8;
  std::size_t period = 140;
  std::size_t total_iters = 7000;
  std::size_t batch_size = 256;
  AdamSettings adam{};
  std::uint64_t seed = 0;
  bool permutation_augment = true;
  unsigned threads = 1;

  void validate() const {
    if (total_iters < 1 || batch_size < 1) throw ConfigError("train: total_iters and batch_size must be >= 1");
    if (!(base_lr >= 0.0)) throw ConfigError("train: base_lr must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train: gamma must be in (0, 1]");
    if (period < 1) throw ConfigError("train: period must be >= 1");
    if (!(adam.epsilon > 0.0 && adam.decay >= 0.0)) throw ConfigError("train: adam epsilon must be > 0 and decay >= 0");
  }
  LrSchedule schedule() const { return {base_lr, gamma, period}; }
};

class DatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rows and provenance co-permuted uniformly at random; label unchanged.
inline InstanceBag permute_bag(const InstanceBag& bag, Rng& rng) {
  const auto perm = rng.permutation(bag.size());
  InstanceBag out = bag;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(bag.features.row(perm[i]).begin(), bag.features.row(perm[i]).end(), out.features.row(i).begin());
    if (!bag.provenance.empty()) out.provenance[i] = bag.provenance[perm[i]];
  }
  return out;
}

inline void require_uniform_bags(const std::vector<InstanceBag>& bags) {
  if (bags.empty()) throw DatasetError("training needs at least one bag");
  for (const auto& b : bags) {
    if (b.size() != bags.front().size() || b.dim() != bags.front().dim()) {
      throw DatasetError("bag '" + b.slide_id + "' is " + Matrix::shape_string(b.size(), b.dim()) + ", expected " +
                         Matrix::shape_string(bags.front().size(), bags.front().dim()));
    }
    if (!b.features.all_finite()) throw DatasetError("bag '" + b.slide_id + "' has non-finite features");
  }
}

struct TrainStep {
  std::size_t iteration = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean cross-entropy over the batch
};

struct TrainResult {
  Head head;
  std::vector<TrainStep> curve;
};

/// Runs `fn(k)` for k in [0, n) over `threads` workers; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t k = t; k < n; k += threads) fn(k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Adam on mean batch cross-entropy. Each batch slot k of iteration t draws its bag,
/// permutation and dropout masks from derive_seed(derive_seed(seed, t), k), and
/// gradients are summed in slot order, so results do not depend on `threads`.
inline TrainResult train_head(const std::vector<InstanceBag>& bags, Head head, const TrainConfig& cfg) {
  cfg.validate();
  require_uniform_bags(bags);
  if (bags.front().dim() != head.config().feature_dim) {
    throw DatasetError("bags have " + std::to_string(bags.front().dim()) + " features, head expects " +
                       std::to_string(head.config().feature_dim));
  }
  AdamState adam(head.params(), cfg.base_lr, cfg.adam);
  const auto schedule = cfg.schedule();
  TrainResult result{std::move(head), {}};
  result.curve.reserve(cfg.total_iters);
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

  std::vector<HeadGradients> slot_grads(cfg.batch_size);
  std::vector<double> slot_loss(cfg.batch_size);
  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    const std::uint64_t iter_seed = derive_seed(cfg.seed, it);
    const Head& model = result.head;
    parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t k) {
      Rng rng(derive_seed(iter_seed, k));
      const auto& source = bags[rng.below(bags.size())];
      const InstanceBag bag = cfg.permutation_augment ? permute_bag(source, rng) : source;
      const auto out = model.forward(bag.features, Mode::train, rng);
      const auto ce = cross_entropy_logits(out.logits, bag.label);
      slot_loss[k] = ce.loss;
      slot_grads[k] = model.backward(out.cache, ce.grad_logits);
    });
    ParameterSet grads = result.head.params().zeros_like();
    double loss = 0.0;
    for (std::size_t k = 0; k < cfg.batch_size; ++k) {
      loss += slot_loss[k] * inv_b;
      auto& src = slot_grads[k].params.blocks();
      auto& dst = grads.blocks();
      for (std::size_t b = 0; b < dst.size(); ++b) {
        auto d = dst[b].value.flat();
        const auto s = src[b].value.flat();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * inv_b;
      }
    }
    const double lr = schedule_lr(schedule, it);
    result.curve.push_back({it, lr, loss});
    adam_step(result.head.params(), grads, adam, lr);
  }
  return result;
}

inline SlidePrediction predict(const Head& head, const InstanceBag& bag) {
  const auto out = head.forward(bag.features);
  SlidePrediction p{bag.slide_id, bag.label, predicted_grade(out.probs), {}};
  std::copy(out.probs.begin(), out.probs.end(), p.probs.begin());
  return p;
}

inline EvalReport evaluate(const Head& head, const std::vector<InstanceBag>& bags, unsigned threads = 1) {
  std::vector<SlidePrediction> preds(bags.size());
  parallel_for(bags.size(), threads, [&](std::size_t k) { preds[k] = predict(head, bags[k]); });
  return make_report(head.config().label(), std::move(preds));
}

}  // namespace rmdl
