#pragma once

// Multi-instance heads: the recalibrated head (local-global fusion + instance
// recalibration + average pooling) and the mean, max and attention baselines.
// All share one classifier block and exact analytic backward passes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmdl/numerics/layers.hpp"
#include "rmdl/numerics/parameter_set.hpp"
#include "rmdl/slide/types.hpp"

namespace rmdl {

enum class HeadKind { rmdl, mean, max, attention };

inline std::string_view head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::rmdl: return "rmdl";
    case HeadKind::mean: return "mean";
    case HeadKind::max: return "max";
    case HeadKind::attention: return "attention";
  }
  return "?";
}

inline HeadKind head_kind_from_name(std::string_view s) {
  for (auto k : {HeadKind::rmdl, HeadKind::mean, HeadKind::max, HeadKind::attention})
    if (head_kind_name(k) == s) return k;
  throw ConfigError("unknown head kind '" + std::string(s) + "' (expected rmdl, mean, max or attention)");
}

struct HeadConfig {
  HeadKind kind = HeadKind::rmdl;
  std::size_t feature_dim = 32;  // D
  std::size_t d1 = 32, d2 = 32, d3 = 32;
  std::size_t attention_dim = 16;
  double dropout_rate = 0.5;
  double leaky_alpha = 0.2;
  bool instance_recalibration = true;  // IR
  bool local_global = true;            // LG
  // With IR the classifier sees m * W applied to mean(u_hat) while Adam steps W, so the
  // 1/m of the average pool lives in the parametrization rather than in the learned weights.
  bool bag_scaled_classifier = true;

  /// Width of h_i: fc3 output, plus the pooled fc1 and fc2 activations when LG is on.
  std::size_t fused_dim() const noexcept { return local_global ? d3 + d1 + d2 : d3; }

  void validate() const {
    if (feature_dim < 1) throw ConfigError("head: feature_dim must be >= 1");
    if (kind == HeadKind::rmdl && (d1 < 2 || d2 < 2 || d3 < 1)) {
      throw ConfigError("head: d1, d2 must be >= 2 (instance norm) and d3 >= 1");
    }
    if (kind == HeadKind::attention && attention_dim < 1) throw ConfigError("head: attention_dim must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("head: dropout_rate must be in [0, 1)");
    if (!(leaky_alpha >= 0.0 && leaky_alpha < 1.0)) throw ConfigError("head: leaky_alpha must be in [0, 1)");
  }
  bool uses_recalibration() const noexcept { return kind == HeadKind::rmdl && instance_recalibration; }
  double classifier_gain(std::size_t m) const noexcept {
    return uses_recalibration() && bag_scaled_classifier ? static_cast<double>(m) : 1.0;
  }
  std::string label() const {
    std::string s(head_kind_name(kind));
    if (kind == HeadKind::rmdl && !instance_recalibration) s += "-no-ir";
    if (kind == HeadKind::rmdl && instance_recalibration && !local_global) s += "-no-lg";
    return s;
  }
};

inline nlohmann::json to_json(const HeadConfig& c) {
  return {{"kind", head_kind_name(c.kind)}, {"feature_dim", c.feature_dim}, {"d1", c.d1}, {"d2", c.d2},
          {"d3", c.d3}, {"attention_dim", c.attention_dim}, {"dropout_rate", c.dropout_rate},
          {"leaky_alpha", c.leaky_alpha}, {"instance_recalibration", c.instance_recalibration},
          {"local_global", c.local_global}, {"bag_scaled_classifier", c.bag_scaled_classifier}};
}

inline HeadConfig head_config_from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.kind = head_kind_from_name(j.at("kind").get<std::string>());
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.d1 = j.value("d1", c.d1);
  c.d2 = j.value("d2", c.d2);
  c.d3 = j.value("d3", c.d3);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.leaky_alpha = j.value("leaky_alpha", c.leaky_alpha);
  c.instance_recalibration = j.value("instance_recalibration", c.instance_recalibration);
  c.local_global = j.value("local_global", c.local_global);
  c.bag_scaled_classifier = j.value("bag_scaled_classifier", c.bag_scaled_classifier);
  c.validate();
  return c;
}

class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Intermediates kept by a forward pass for the backward pass.
struct HeadCache {
  std::uint64_t params_fingerprint = 0;
  Matrix u;
  // rmdl
  InstanceNormResult n1, n2;
  Matrix z1, z2, a1, a2, d1, d2, a3, h;
  Matrix mask1, mask2;
  PoolResult g1, g2;
  std::vector<double> recal_logits;
  std::vector<double> alpha;
  Matrix u_hat;
  // attention
  Matrix gate;  // tanh(U V + c)
  // shared
  PoolResult pooled;
  std::vector<double> z;
  std::vector<double> logits;
};

struct HeadOutput {
  std::vector<double> probs;   // length 3
  std::vector<double> logits;  // length 3
  std::vector<double> alpha;   // instance weights (rmdl with IR, attention); empty otherwise
  HeadCache cache;
};

struct HeadGradients {
  ParameterSet params;
  Matrix du;  // d(loss)/dU
};

inline std::uint64_t fingerprint(const ParameterSet& p) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& b : p.blocks())
    for (double v : b.value.flat()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
  return h;
}

struct Recalibration {
  std::vector<double> logits;  // w . h_i + b
  std::vector<double> alpha;   // softmax of the logits over instances
  Matrix u_hat;               // row i = alpha_i * u_i
};

inline Recalibration recalibrate(const Matrix& h, const Matrix& u, std::span<const double> w, double b) {
  if (h.rows() != u.rows() || w.size() != h.cols()) {
    throw DimensionError("recalibrate: H " + Matrix::shape_string(h.rows(), h.cols()) + ", U " +
                         Matrix::shape_string(u.rows(), u.cols()) + ", w length " + std::to_string(w.size()));
  }
  std::vector<double> s(h.rows());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double acc = b;
    const auto hi = h.row(i);
    for (std::size_t j = 0; j < hi.size(); ++j) acc += w[j] * hi[j];
    s[i] = acc;
  }
  Recalibration r{s, softmax(s), u};
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (double& v : r.u_hat.row(i)) v *= r.alpha[i];
  return r;
}

class Head {
 public:
  /// Glorot-uniform weights, zero biases.
  Head(const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    auto glorot = [&](std::size_t in, std::size_t out) {
      Matrix w(in, out);
      const double s = std::sqrt(6.0 / static_cast<double>(in + out));
      for (double& v : w.flat()) v = rng.uniform(-s, s);
      return w;
    };
    const auto D = cfg_.feature_dim;
    if (cfg_.uses_recalibration()) {
      params_.add("fc1.weight", glorot(D, cfg_.d1));
      params_.add("fc1.bias", Matrix(1, cfg_.d1));
      params_.add("fc2.weight", glorot(cfg_.d1, cfg_.d2));
      params_.add("fc2.bias", Matrix(1, cfg_.d2));
      params_.add("fc3.weight", glorot(cfg_.d2, cfg_.d3));
      params_.add("fc3.bias", Matrix(1, cfg_.d3));
      params_.add("recal.weight", glorot(cfg_.fused_dim(), 1));
      params_.add("recal.bias", Matrix(1, 1));
    } else if (cfg_.kind == HeadKind::attention) {
      params_.add("attention.V", glorot(D, cfg_.attention_dim));
      params_.add("attention.c", Matrix(1, cfg_.attention_dim));
      params_.add("attention.w", glorot(cfg_.attention_dim, 1));
      params_.add("attention.b", Matrix(1, 1));
    }
    params_.add("classifier.weight", glorot(D, kNumGrades));
    params_.add("classifier.bias", Matrix(1, kNumGrades));
  }

  Head(const HeadConfig& cfg, ParameterSet params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    Rng dummy(0);
    Head reference(cfg_, dummy);
    reference.params_.require_same_layout(params_, "Head parameters");
  }

  const HeadConfig& config() const noexcept { return cfg_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  /// Class probabilities for one bag. `rng` drives dropout in train mode only.
  HeadOutput forward(const Matrix& u, Mode mode, Rng& rng) const {
    if (u.rows() == 0) throw DimensionError("head forward: empty bag");
    if (u.cols() != cfg_.feature_dim) {
      throw DimensionError("head forward: bag has " + std::to_string(u.cols()) + " features, head expects " +
                           std::to_string(cfg_.feature_dim));
    }
    HeadOutput out;
    auto& c = out.cache;
    c.params_fingerprint = fingerprint(params_);
    c.u = u;
    switch (cfg_.kind) {
      case HeadKind::rmdl:
        if (cfg_.instance_recalibration) {
          fuse_local_global(c, mode, rng);
          recalibrate(c);
          c.pooled = pool_instances(c.u_hat, PoolKind::average);
        } else {
          c.pooled = pool_instances(u, PoolKind::average);
        }
        break;
      case HeadKind::mean: c.pooled = pool_instances(u, PoolKind::average); break;
      case HeadKind::max: c.pooled = pool_instances(u, PoolKind::max); break;
      case HeadKind::attention: attend(c); break;
    }
    if (cfg_.kind != HeadKind::attention) c.z = c.pooled.out;
    const Matrix logits = dense_apply(classifier_input(c), params_["classifier.weight"],
                                      params_["classifier.bias"].flat());
    c.logits.assign(logits.flat().begin(), logits.flat().end());
    out.logits = c.logits;
    out.probs = softmax(c.logits);
    out.alpha = c.alpha;
    return out;
  }

  HeadOutput forward(const Matrix& u) const {
    Rng unused(0);
    return forward(u, Mode::eval, unused);
  }

  /// Gradients of a scalar loss given d(loss)/d(logits).
  HeadGradients backward(const HeadCache& c, std::span<const double> dlogits) const {
    if (c.params_fingerprint != fingerprint(params_)) {
      throw StaleCacheError("head backward: parameters changed since the forward pass");
    }
    if (dlogits.size() != kNumGrades) throw DimensionError("head backward: expected 3 logit gradients");
    HeadGradients g{params_.zeros_like(), Matrix(c.u.rows(), c.u.cols())};
    Matrix dl(1, kNumGrades);
    std::copy(dlogits.begin(), dlogits.end(), dl.flat().begin());
    auto dc = dense_backward(classifier_input(c), params_["classifier.weight"], dl);
    g.params["classifier.weight"] = std::move(dc.dweights);
    g.params["classifier.bias"] = std::move(dc.dbias);
    const double gain = cfg_.classifier_gain(c.u.rows());
    if (gain != 1.0)
      for (double& v : dc.dx.flat()) v *= gain;
    const auto dz = dc.dx.row(0);

    switch (cfg_.kind) {
      case HeadKind::rmdl:
        if (cfg_.instance_recalibration) {
          const Matrix du_hat = pool_instances_backward(c.pooled, dz);
          backward_recalibrated(c, du_hat, g);
        } else {
          g.du = pool_instances_backward(c.pooled, dz);
        }
        break;
      case HeadKind::mean:
      case HeadKind::max: g.du = pool_instances_backward(c.pooled, dz); break;
      case HeadKind::attention: backward_attention(c, dz, g); break;
    }
    return g;
  }

 private:
  Matrix classifier_input(const HeadCache& c) const {
    Matrix x = Matrix::row_vector(c.z);
    const double gain = cfg_.classifier_gain(c.u.rows());
    if (gain != 1.0)
      for (double& v : x.flat()) v *= gain;
    return x;
  }

  void fuse_local_global(HeadCache& c, Mode mode, Rng& rng) const {
    c.z1 = dense_apply(c.u, params_["fc1.weight"], params_["fc1.bias"].flat());
    c.n1 = instance_normalize(c.z1);
    c.a1 = leaky_relu(c.n1.y, cfg_.leaky_alpha);
    auto r1 = dropout(c.a1, cfg_.dropout_rate, mode, rng);
    c.d1 = std::move(r1.y);
    c.mask1 = std::move(r1.mask);

    c.z2 = dense_apply(c.d1, params_["fc2.weight"], params_["fc2.bias"].flat());
    c.n2 = instance_normalize(c.z2);
    c.a2 = leaky_relu(c.n2.y, cfg_.leaky_alpha);
    auto r2 = dropout(c.a2, cfg_.dropout_rate, mode, rng);
    c.d2 = std::move(r2.y);
    c.mask2 = std::move(r2.mask);

    c.a3 = softmax_rows(dense_apply(c.d2, params_["fc3.weight"], params_["fc3.bias"].flat()));

    const std::size_t m = c.u.rows();
    c.h = Matrix(m, cfg_.fused_dim());
    if (cfg_.local_global) {
      c.g1 = pool_instances(c.d1, PoolKind::max);
      c.g2 = pool_instances(c.d2, PoolKind::max);
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto row = c.h.row(i);
      auto it = std::copy(c.a3.row(i).begin(), c.a3.row(i).end(), row.begin());
      if (cfg_.local_global) {
        it = std::copy(c.g1.out.begin(), c.g1.out.end(), it);
        std::copy(c.g2.out.begin(), c.g2.out.end(), it);
      }
    }
  }

  void recalibrate(HeadCache& c) const {
    auto r = rmdl::recalibrate(c.h, c.u, params_["recal.weight"].flat(), params_["recal.bias"](0, 0));
    c.recal_logits = std::move(r.logits);
    c.alpha = std::move(r.alpha);
    c.u_hat = std::move(r.u_hat);
  }

  void attend(HeadCache& c) const {
    c.gate = dense_apply(c.u, params_["attention.V"], params_["attention.c"].flat());
    for (double& v : c.gate.flat()) v = std::tanh(v);
    const Matrix s = dense_apply(c.gate, params_["attention.w"], params_["attention.b"].flat());
    c.alpha = softmax(s.flat());
    c.z.assign(c.u.cols(), 0.0);
    for (std::size_t i = 0; i < c.u.rows(); ++i) {
      const auto ui = c.u.row(i);
      for (std::size_t j = 0; j < ui.size(); ++j) c.z[j] += c.alpha[i] * ui[j];
    }
  }

  void backward_recalibrated(const HeadCache& c, const Matrix& du_hat, HeadGradients& g) const {
    const std::size_t m = c.u.rows();
    // u_hat_i = alpha_i * u_i
    std::vector<double> dalpha(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto ui = c.u.row(i);
      const auto di = du_hat.row(i);
      auto gi = g.du.row(i);
      for (std::size_t j = 0; j < ui.size(); ++j) {
        dalpha[i] += di[j] * ui[j];
        gi[j] = c.alpha[i] * di[j];
      }
    }
    // alpha = softmax(H w + b)
    const auto ds = softmax_backward(c.alpha, dalpha);
    const auto w = params_["recal.weight"].flat();
    auto dw = g.params["recal.weight"].flat();
    double db = 0.0;
    Matrix dh(m, cfg_.fused_dim());
    for (std::size_t i = 0; i < m; ++i) {
      db += ds[i];
      const auto hi = c.h.row(i);
      auto dhi = dh.row(i);
      for (std::size_t j = 0; j < hi.size(); ++j) {
        dw[j] += ds[i] * hi[j];
        dhi[j] = ds[i] * w[j];
      }
    }
    g.params["recal.bias"](0, 0) = db;

    // h_i = [a3_i, g1, g2]
    const auto d3 = cfg_.d3;
    Matrix da3(m, d3);
    std::vector<double> dg1(cfg_.d1, 0.0), dg2(cfg_.d2, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto dhi = dh.row(i);
      std::copy(dhi.begin(), dhi.begin() + static_cast<std::ptrdiff_t>(d3), da3.row(i).begin());
      if (cfg_.local_global) {
        for (std::size_t j = 0; j < cfg_.d1; ++j) dg1[j] += dhi[d3 + j];
        for (std::size_t j = 0; j < cfg_.d2; ++j) dg2[j] += dhi[d3 + cfg_.d1 + j];
      }
    }

    auto b3 = dense_backward(c.d2, params_["fc3.weight"], softmax_rows_backward(c.a3, da3));
    g.params["fc3.weight"] = std::move(b3.dweights);
    g.params["fc3.bias"] = std::move(b3.dbias);
    Matrix dd2 = std::move(b3.dx);
    if (cfg_.local_global) add_into(dd2, pool_instances_backward(c.g2, dg2));

    const Matrix dz2 = instance_normalize_backward(
        c.n2, leaky_relu_backward(c.n2.y, dropout_backward(c.mask2, dd2), cfg_.leaky_alpha));
    auto b2 = dense_backward(c.d1, params_["fc2.weight"], dz2);
    g.params["fc2.weight"] = std::move(b2.dweights);
    g.params["fc2.bias"] = std::move(b2.dbias);
    Matrix dd1 = std::move(b2.dx);
    if (cfg_.local_global) add_into(dd1, pool_instances_backward(c.g1, dg1));

    const Matrix dz1 = instance_normalize_backward(
        c.n1, leaky_relu_backward(c.n1.y, dropout_backward(c.mask1, dd1), cfg_.leaky_alpha));
    auto b1 = dense_backward(c.u, params_["fc1.weight"], dz1);
    g.params["fc1.weight"] = std::move(b1.dweights);
    g.params["fc1.bias"] = std::move(b1.dbias);
    add_into(g.du, b1.dx);
  }

  void backward_attention(const HeadCache& c, std::span<const double> dz, HeadGradients& g) const {
    const std::size_t m = c.u.rows();
    std::vector<double> dalpha(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto ui = c.u.row(i);
      auto gi = g.du.row(i);
      for (std::size_t j = 0; j < ui.size(); ++j) {
        dalpha[i] += dz[j] * ui[j];
        gi[j] = c.alpha[i] * dz[j];
      }
    }
    const auto ds = softmax_backward(c.alpha, dalpha);
    Matrix ds_col(m, 1);
    std::copy(ds.begin(), ds.end(), ds_col.flat().begin());
    auto bw = dense_backward(c.gate, params_["attention.w"], ds_col);
    g.params["attention.w"] = std::move(bw.dweights);
    g.params["attention.b"] = std::move(bw.dbias);
    Matrix dpre = std::move(bw.dx);
    const auto t = c.gate.flat();
    auto d = dpre.flat();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 1.0 - t[k] * t[k];
    auto bv = dense_backward(c.u, params_["attention.V"], dpre);
    g.params["attention.V"] = std::move(bv.dweights);
    g.params["attention.c"] = std::move(bv.dbias);
    add_into(g.du, bv.dx);
  }

  static void add_into(Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "head backward");
    auto x = a.flat();
    const auto y = b.flat();
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += y[k];
  }

  HeadConfig cfg_;
  ParameterSet params_;
};

/// Model document: head configuration plus parameter blocks.
inline nlohmann::json to_json(const Head& h) {
  return {{"format", "rmdl-model"}, {"version", 1}, {"head", to_json(h.config())}, {"params", to_json(h.params())}};
}

inline Head head_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rmdl-model") throw ConfigError("not a model document (format != rmdl-model)");
  return Head(head_config_from_json(j.at("head")), parameter_set_from_json(j.at("params")));
}

}  // namespace rmdl
