#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rmdl {

/// Ordinal tissue grade.
enum class Grade : std::uint8_t { normal = 0, dysplasia = 1, cancer = 2 };

inline constexpr std::size_t kNumGrades = 3;
inline constexpr std::array<Grade, kNumGrades> kAllGrades{Grade::normal, Grade::dysplasia, Grade::cancer};
inline constexpr std::array<std::string_view, kNumGrades> kGradeNames{"normal", "dysplasia", "cancer"};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr int to_int(Grade g) noexcept { return static_cast<int>(g); }
constexpr std::size_t to_index(Grade g) noexcept { return static_cast<std::size_t>(g); }

inline Grade grade_from_int(long long v) {
  if (v < 0 || v > 2) throw std::out_of_range("grade must be 0, 1 or 2, got " + std::to_string(v));
  return static_cast<Grade>(v);
}

inline std::string_view grade_name(Grade g) noexcept { return kGradeNames[to_index(g)]; }

inline Grade grade_from_name(std::string_view name) {
  for (auto g : kAllGrades)
    if (grade_name(g) == name) return g;
  throw std::out_of_range("unknown grade '" + std::string(name) + "'");
}

/// Cell coordinates on the slide lattice. Orders row-major (y, then x).
struct Cell {
  std::uint32_t x = 0;
  std::uint32_t y = 0;

  friend constexpr bool operator==(const Cell&, const Cell&) = default;
  friend constexpr std::strong_ordering operator<=>(const Cell& a, const Cell& b) noexcept {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

}  // namespace rmdl
