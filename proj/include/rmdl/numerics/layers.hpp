#pragma once

// Forward/backward kernels for the fixed layer set of the MIL heads.
//
// Every reduction runs in ascending index order, so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rmdl/numerics/matrix.hpp"
#include "rmdl/numerics/rng.hpp"

namespace rmdl {

enum class Mode { train, eval };

// ---------------------------------------------------------------- dense

inline Matrix dense_apply(const Matrix& x, const Matrix& weights, std::span<const double> bias) {
  if (x.cols() != weights.rows()) {
    throw DimensionError("dense_apply: input " + x.shape() + " vs weights " + weights.shape());
  }
  if (bias.size() != weights.cols()) {
    throw DimensionError("dense_apply: weights " + weights.shape() + " vs bias " +
                         Matrix::shape_string(1, bias.size()));
  }
  Matrix out(x.rows(), weights.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto o = out.row(i);
    std::copy(bias.begin(), bias.end(), o.begin());
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = x(i, k);
      const auto w = weights.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += xik * w[j];
    }
  }
  return out;
}

struct DenseGrads {
  Matrix dx;
  Matrix dweights;
  Matrix dbias;  // 1 x d_out
};

inline DenseGrads dense_backward(const Matrix& x, const Matrix& weights, const Matrix& dy) {
  if (dy.rows() != x.rows() || dy.cols() != weights.cols() || x.cols() != weights.rows()) {
    throw DimensionError("dense_backward: upstream " + dy.shape() + " vs input " + x.shape() +
                         " and weights " + weights.shape());
  }
  DenseGrads g{Matrix(x.rows(), x.cols()), Matrix(weights.rows(), weights.cols()),
               Matrix(1, weights.cols())};
  Matrix wt(weights.cols(), weights.rows());
  for (std::size_t k = 0; k < weights.rows(); ++k)
    for (std::size_t j = 0; j < weights.cols(); ++j) wt(j, k) = weights(k, j);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto d = dy.row(i);
    for (std::size_t j = 0; j < d.size(); ++j) g.dbias(0, j) += d[j];
    for (std::size_t k = 0; k < x.cols(); ++k) {
      auto dw = g.dweights.row(k);
      const double xik = x(i, k);
      for (std::size_t j = 0; j < d.size(); ++j) dw[j] += xik * d[j];
    }
    auto dx = g.dx.row(i);
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double dj = d[j];
      const auto w = wt.row(j);
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dj * w[k];
    }
  }
  return g;
}

// ---------------------------------------------------------------- instance normalization

inline constexpr double kInstanceNormEpsilon = 1e-5;

struct InstanceNormResult {
  Matrix y;
  std::vector<double> inv_std;  // per row, 1 / sqrt(var + eps)
};

/// Standardizes each row over its features. No affine parameters.
inline InstanceNormResult instance_normalize(const Matrix& x, double epsilon = kInstanceNormEpsilon) {
  if (x.cols() < 2) {
    throw DimensionError("instance_normalize: rows need at least 2 features, got " + x.shape());
  }
  InstanceNormResult r{Matrix(x.rows(), x.cols()), std::vector<double>(x.rows())};
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    r.inv_std[i] = inv;
    auto out = r.y.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean) * inv;
  }
  return r;
}

inline Matrix instance_normalize_backward(const InstanceNormResult& fwd, const Matrix& dy) {
  require_same_shape(fwd.y, dy, "instance_normalize_backward");
  Matrix dx(dy.rows(), dy.cols());
  const double n = static_cast<double>(dy.cols());
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const auto y = fwd.y.row(i);
    const auto d = dy.row(i);
    double mean_d = 0.0;
    double mean_dy = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      mean_d += d[j];
      mean_dy += d[j] * y[j];
    }
    mean_d /= n;
    mean_dy /= n;
    auto out = dx.row(i);
    for (std::size_t j = 0; j < d.size(); ++j) {
      out[j] = fwd.inv_std[i] * (d[j] - mean_d - y[j] * mean_dy);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- leaky ReLU

inline Matrix leaky_relu(const Matrix& x, double alpha) {
  Matrix y = x;
  for (double& v : y.flat())
    if (v < 0.0) v *= alpha;
  return y;
}

/// `x` is the forward input.
inline Matrix leaky_relu_backward(const Matrix& x, const Matrix& dy, double alpha) {
  require_same_shape(x, dy, "leaky_relu_backward");
  Matrix dx = dy;
  const auto xs = x.flat();
  auto out = dx.flat();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (xs[i] < 0.0) out[i] *= alpha;
  return dx;
}

// ---------------------------------------------------------------- dropout

struct DropoutResult {
  Matrix y;
  Matrix mask;  // 0 or 1/(1-rate); all ones in eval mode
};

/// Inverted dropout: survivors are scaled at train time so eval mode is the identity.
inline DropoutResult dropout(const Matrix& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw NumericError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult r{x, Matrix(x.rows(), x.cols(), 1.0)};
  if (mode == Mode::eval || rate == 0.0) return r;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto y = r.y.flat();
  auto mask = r.mask.flat();
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    y[i] *= mask[i];
  }
  return r;
}

inline Matrix dropout_backward(const Matrix& mask, const Matrix& dy) {
  require_same_shape(mask, dy, "dropout_backward");
  Matrix dx = dy;
  auto out = dx.flat();
  const auto m = mask.flat();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return dx;
}

// ---------------------------------------------------------------- softmax

/// Max-shifted softmax.
inline std::vector<double> softmax(std::span<const double> z) {
  if (z.empty()) throw NumericError("softmax: empty input");
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

/// Gradient w.r.t. the logits given the forward output `p` and upstream `dp`.
inline std::vector<double> softmax_backward(std::span<const double> p, std::span<const double> dp) {
  if (p.size() != dp.size()) {
    throw DimensionError("softmax_backward: " + std::to_string(p.size()) + " vs " +
                         std::to_string(dp.size()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  std::vector<double> dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - dot);
  return dz;
}

inline Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto s = softmax(z.row(i));
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

inline Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
  require_same_shape(p, dp, "softmax_rows_backward");
  Matrix dz(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto g = softmax_backward(p.row(i), dp.row(i));
    std::copy(g.begin(), g.end(), dz.row(i).begin());
  }
  return dz;
}

// ---------------------------------------------------------------- instance-axis pooling

enum class PoolKind { max, average };

struct PoolResult {
  std::vector<double> out;
  std::vector<std::size_t> argmax;  // per column; empty for average pooling
  std::size_t instances = 0;
};

/// Column-wise reduction over instances (rows). Max ties resolve to the lowest row.
inline PoolResult pool_instances(const Matrix& x, PoolKind kind) {
  if (x.rows() == 0) throw NumericError("pool_instances: empty bag");
  PoolResult r{std::vector<double>(x.cols(), 0.0), {}, x.rows()};
  if (kind == PoolKind::max) {
    r.argmax.assign(x.cols(), 0);
    const auto first = x.row(0);
    std::copy(first.begin(), first.end(), r.out.begin());
    for (std::size_t i = 1; i < x.rows(); ++i) {
      const auto row = x.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] > r.out[j]) {
          r.out[j] = row[j];
          r.argmax[j] = i;
        }
      }
    }
  } else {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto row = x.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) r.out[j] += row[j];
    }
    const double m = static_cast<double>(x.rows());
    for (double& v : r.out) v /= m;
  }
  return r;
}

inline Matrix pool_instances_backward(const PoolResult& fwd, std::span<const double> dy) {
  if (dy.size() != fwd.out.size()) {
    throw DimensionError("pool_instances_backward: upstream length " + std::to_string(dy.size()) +
                         " vs pooled length " + std::to_string(fwd.out.size()));
  }
  Matrix dx(fwd.instances, fwd.out.size());
  if (!fwd.argmax.empty()) {
    for (std::size_t j = 0; j < dy.size(); ++j) dx(fwd.argmax[j], j) = dy[j];
  } else {
    const double m = static_cast<double>(fwd.instances);
    for (std::size_t i = 0; i < fwd.instances; ++i)
      for (std::size_t j = 0; j < dy.size(); ++j) dx(i, j) = dy[j] / m;
  }
  return dx;
}

}  // namespace rmdl
