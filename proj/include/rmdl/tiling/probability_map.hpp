#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rmdl/io/files.hpp"
#include "rmdl/slide/features.hpp"
#include "rmdl/tiling/block_plan.hpp"
#include "rmdl/tiling/scorer.hpp"

namespace rmdl {

/// Per-cell class probabilities (normal, dysplasia, cancer) plus the tissue mask.
struct ProbabilityMap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<double> data;          // (y * width + x) * 3 + channel
  std::vector<std::uint8_t> tissue;  // y * width + x

  ProbabilityMap() = default;
  ProbabilityMap(std::uint32_t w, std::uint32_t h)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * kNumGrades, 0.0),
        tissue(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t cell_index(Cell c) const noexcept { return static_cast<std::size_t>(c.y) * width + c.x; }
  double at(Cell c, Grade channel) const noexcept { return data[cell_index(c) * kNumGrades + to_index(channel)]; }
  double& at(Cell c, Grade channel) noexcept { return data[cell_index(c) * kNumGrades + to_index(channel)]; }
  bool is_tissue(Cell c) const noexcept { return tissue[cell_index(c)] != 0; }

  friend bool operator==(const ProbabilityMap&, const ProbabilityMap&) = default;
};

class ScorerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool is_probability_triple(const ClassProbs& p) noexcept {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= 1e-9;
}

/// Cells owned by the block at `origin`: those whose anchor pixel (cell * S) lies in
/// [origin, origin + block_stride). Owned ranges of neighboring blocks abut, so the
/// stitched map has no overlap and no gaps. Edge blocks are clipped to the slide.
struct CellRange {
  std::uint32_t x0, x1, y0, y1;  // half-open
};

inline CellRange owned_cells(const BlockPlan& plan, const PixelPoint& origin, std::uint32_t cells_x,
                             std::uint32_t cells_y) {
  const auto first = [&](long px) { return static_cast<std::uint32_t>((px + plan.stride - 1) / plan.stride); };
  return {std::min(first(origin.x), cells_x), std::min(first(origin.x + plan.block_stride), cells_x),
          std::min(first(origin.y), cells_y), std::min(first(origin.y + plan.block_stride), cells_y)};
}

/// Scores every cell of `slide` block by block and assembles the map.
///
/// `features` may be null when the scorer ignores features. Blocks are distributed
/// over `threads` workers; each writes a disjoint cell range.
inline ProbabilityMap stitch_probability_map(const SyntheticSlide& slide, const PatchScorer& scorer,
                                             const BlockPlan& plan, const FeatureModel* features,
                                             unsigned threads = 1) {
  if (plan.width < static_cast<long>(slide.side) * plan.stride ||
      plan.height < static_cast<long>(slide.side) * plan.stride) {
    throw GeometryError("stitch_probability_map: block plan does not cover the slide");
  }
  if (scorer.needs_features() && features == nullptr) {
    throw ScorerError("stitch_probability_map: scorer needs features but no feature model was given");
  }
  ProbabilityMap map(slide.side, slide.side);
  map.tissue = slide.tissue;

  auto score_block = [&](const PixelPoint& origin) {
    const auto r = owned_cells(plan, origin, slide.side, slide.side);
    for (std::uint32_t y = r.y0; y < r.y1; ++y) {
      for (std::uint32_t x = r.x0; x < r.x1; ++x) {
        const Cell c{x, y};
        ClassProbs p{1.0, 0.0, 0.0};
        if (slide.is_tissue(c)) {
          std::vector<double> f;
          if (scorer.needs_features()) f = features->cell_features(slide, c);
          p = scorer.score({slide, c, f});
          if (!is_probability_triple(p)) {
            throw ScorerError("scorer returned an invalid probability triple at cell (" + std::to_string(x) + ", " +
                              std::to_string(y) + ") of slide '" + slide.id + "'");
          }
        }
        for (auto g : kAllGrades) map.at(c, g) = p[to_index(g)];
      }
    }
  };

  const auto n = plan.origins.size();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (const auto& o : plan.origins) score_block(o);
    return map;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t b = t; b < n; b += threads) score_block(plan.origins[b]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return map;
}

// ---------------------------------------------------------------- export

/// Float image: one line of JSON header, then little-endian binary32 planes
/// (channel-major, row-major within a plane).
inline std::string encode_float_image(const ProbabilityMap& map) {
  const nlohmann::json header{{"width", map.width}, {"height", map.height}, {"channels", kNumGrades},
                              {"dtype", "float32-le"}, {"layout", "planar"}};
  std::string out = header.dump() + "\n";
  const std::size_t cells = static_cast<std::size_t>(map.width) * map.height;
  out.reserve(out.size() + cells * kNumGrades * 4);
  for (std::size_t ch = 0; ch < kNumGrades; ++ch) {
    for (std::size_t i = 0; i < cells; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map.data[i * kNumGrades + ch]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  return out;
}

/// 8-bit binary PGM of one channel.
inline std::string encode_channel_pgm(const ProbabilityMap& map, Grade channel) {
  std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  for (std::uint32_t y = 0; y < map.height; ++y)
    for (std::uint32_t x = 0; x < map.width; ++x) {
      const double v = std::clamp(map.at({x, y}, channel), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  return out;
}

inline void export_probability_map(const ProbabilityMap& map, const std::filesystem::path& stem, bool with_pgm) {
  auto with_suffix = [&](const std::string& s) {
    auto p = stem;
    p += s;
    return p;
  };
  write_file_atomic(with_suffix(".fimg"), encode_float_image(map));
  if (with_pgm)
    for (auto g : kAllGrades) write_file_atomic(with_suffix("_" + std::string(grade_name(g)) + ".pgm"), encode_channel_pgm(map, g));
}

}  // namespace rmdl
