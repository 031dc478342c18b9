#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rmdl/numerics/rng.hpp"
#include "rmdl/slide/types.hpp"

namespace rmdl {

/// Square single-channel raster with values in [0, 1].
struct PatchRaster {
  std::size_t side = 0;
  std::vector<double> data;

  PatchRaster() = default;
  explicit PatchRaster(std::size_t s, double fill = 0.0) : side(s), data(s * s, fill) {}

  double& at(std::size_t x, std::size_t y) noexcept { return data[y * side + x]; }
  double at(std::size_t x, std::size_t y) const noexcept { return data[y * side + x]; }

  friend bool operator==(const PatchRaster&, const PatchRaster&) = default;
};

struct AugmentConfig {
  double scale_min = 0.9;
  double scale_max = 1.1;
  double rotation_min = 0.0;
  double rotation_max = 2.0 * std::numbers::pi;
  double flip_probability = 0.5;
  std::size_t crop_side = 0;
};

/// One concrete geometric transform.
struct PatchTransform {
  double scale = 1.0;
  double angle = 0.0;
  bool flip_x = false;
  bool flip_y = false;
};

namespace detail {

inline double bilinear(const PatchRaster& p, double x, double y) noexcept {
  const double hi = static_cast<double>(p.side - 1);
  x = std::clamp(x, 0.0, hi);
  y = std::clamp(y, 0.0, hi);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, p.side - 1);
  const std::size_t y1 = std::min(y0 + 1, p.side - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = p.at(x0, y0) * (1.0 - fx) + p.at(x1, y0) * fx;
  const double bottom = p.at(x0, y1) * (1.0 - fx) + p.at(x1, y1) * fx;
  return std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
}

}  // namespace detail

/// Applies `t` about the patch center and center-crops to `crop_side`.
///
/// Output pixel offsets d (from the output center) sample the input at
/// center + R(angle) * (scale * d), after optional mirroring. Samples falling
/// outside the input replicate the border.
inline PatchRaster transform_patch(const PatchRaster& p, const PatchTransform& t, std::size_t crop_side) {
  if (crop_side == 0 || crop_side > p.side) {
    throw ConfigError("transform_patch: crop side " + std::to_string(crop_side) + " does not fit a " +
                      std::to_string(p.side) + "-pixel patch");
  }
  PatchRaster out(crop_side);
  const double in_c = (static_cast<double>(p.side) - 1.0) / 2.0;
  const double out_c = (static_cast<double>(crop_side) - 1.0) / 2.0;
  const double cs = std::cos(t.angle);
  const double sn = std::sin(t.angle);
  for (std::size_t y = 0; y < crop_side; ++y) {
    for (std::size_t x = 0; x < crop_side; ++x) {
      double dx = (static_cast<double>(x) - out_c) * t.scale;
      double dy = (static_cast<double>(y) - out_c) * t.scale;
      if (t.flip_x) dx = -dx;
      if (t.flip_y) dy = -dy;
      const double sx = in_c + cs * dx - sn * dy;
      const double sy = in_c + sn * dx + cs * dy;
      out.at(x, y) = detail::bilinear(p, sx, sy);
    }
  }
  return out;
}

/// Random scale, rotation and flips followed by a center crop.
inline PatchRaster augment_patch(const PatchRaster& p, Rng& rng, const AugmentConfig& cfg) {
  const std::size_t crop = cfg.crop_side == 0 ? p.side : cfg.crop_side;
  if (!(cfg.scale_min > 0.0 && cfg.scale_min <= cfg.scale_max)) throw ConfigError("augment_patch: bad scale range");
  // The largest sampling scale must still keep the crop inside the source patch.
  if (static_cast<double>(crop) * cfg.scale_max > static_cast<double>(p.side) + 1e-9) {
    throw ConfigError("augment_patch: crop side " + std::to_string(crop) + " exceeds " + std::to_string(p.side) +
                      " / " + std::to_string(cfg.scale_max));
  }
  PatchTransform t;
  t.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  t.angle = rng.uniform(cfg.rotation_min, cfg.rotation_max);
  t.flip_x = rng.bernoulli(cfg.flip_probability);
  t.flip_y = rng.bernoulli(cfg.flip_probability);
  return transform_patch(p, t, crop);
}

}  // namespace rmdl
