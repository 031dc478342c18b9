#pragma once

#include <string>
#include <vector>

#include "rmdl/numerics/matrix.hpp"
#include "rmdl/slide/types.hpp"

namespace rmdl {

/// Where a bag row came from: the probability channel that selected it, its cell, and its score.
struct Provenance {
  Grade channel = Grade::normal;
  Cell cell;
  double score = 0.0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Selected instance features of one slide plus the slide label.
struct InstanceBag {
  std::string slide_id;
  Matrix features;  // m x D, values representable as 32-bit floats
  Grade label = Grade::normal;
  std::vector<Provenance> provenance;  // length m, or empty when not tracked

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  friend bool operator==(const InstanceBag&, const InstanceBag&) = default;
};

}  // namespace rmdl
