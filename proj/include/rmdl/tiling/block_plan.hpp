#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmdl {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PixelPoint {
  long x = 0;
  long y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

/// Overlapped block tiling for fully convolutional inference.
///
/// A block of side I run through a network with patch side N and cumulative
/// stride S yields an O x O output map, O = ceil((I - N) / S) + 1. Consecutive
/// blocks start I - N + S pixels apart, so their output maps abut exactly.
struct BlockPlan {
  long block_side = 0;    // I
  long patch_side = 0;    // N
  long stride = 0;        // S
  long block_stride = 0;  // I - N + S
  long output_side = 0;   // O
  long width = 0;         // slide extent in pixels
  long height = 0;
  std::vector<PixelPoint> origins;  // row-major

  long blocks_x() const noexcept { return (width + block_stride - 1) / block_stride; }
  long blocks_y() const noexcept { return (height + block_stride - 1) / block_stride; }
};

inline long output_map_side(long block_side, long patch_side, long stride) {
  return (block_side - patch_side + stride - 1) / stride + 1;
}

inline BlockPlan plan_blocks(long width, long height, long block_side, long patch_side, long stride) {
  if (stride < 1) throw GeometryError("plan_blocks: stride must be >= 1");
  if (patch_side < 1) throw GeometryError("plan_blocks: patch side must be >= 1");
  if (block_side < patch_side) {
    throw GeometryError("plan_blocks: block side " + std::to_string(block_side) + " is smaller than patch side " +
                        std::to_string(patch_side));
  }
  if (stride > patch_side) {
    throw GeometryError("plan_blocks: stride " + std::to_string(stride) + " exceeds patch side " +
                        std::to_string(patch_side) + "; blocks would leave gaps");
  }
  if (width < 1 || height < 1) throw GeometryError("plan_blocks: empty slide extent");
  BlockPlan plan;
  plan.block_side = block_side;
  plan.patch_side = patch_side;
  plan.stride = stride;
  plan.block_stride = block_side - patch_side + stride;
  plan.output_side = output_map_side(block_side, patch_side, stride);
  plan.width = width;
  plan.height = height;
  for (long y = 0; y < height; y += plan.block_stride)
    for (long x = 0; x < width; x += plan.block_stride) plan.origins.push_back({x, y});
  return plan;
}

/// Plan over a lattice of `cells_x` x `cells_y` cells where one cell is S pixels.
inline BlockPlan plan_blocks_for_grid(long cells_x, long cells_y, long block_side, long patch_side, long stride) {
  return plan_blocks(cells_x * stride, cells_y * stride, block_side, patch_side, stride);
}

}  // namespace rmdl
