#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rmdl/numerics/matrix.hpp"

namespace rmdl {

struct NamedBlock {
  std::string name;
  Matrix value;

  friend bool operator==(const NamedBlock&, const NamedBlock&) = default;
};

/// Ordered collection of named parameter matrices. Gradients and optimizer moments
/// use the same layout as the parameters they belong to.
class ParameterSet {
 public:
  ParameterSet() = default;

  Matrix& add(std::string name, Matrix value) {
    if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter block '" + name + "'");
    blocks_.push_back({std::move(name), std::move(value)});
    return blocks_.back().value;
  }

  Matrix& operator[](std::string_view name) { return require(name); }
  const Matrix& operator[](std::string_view name) const {
    return const_cast<ParameterSet*>(this)->require(name);
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::vector<NamedBlock>& blocks() noexcept { return blocks_; }
  const std::vector<NamedBlock>& blocks() const noexcept { return blocks_; }

  std::size_t total_size() const noexcept {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.value.size();
    return n;
  }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const {
    ParameterSet z;
    for (const auto& b : blocks_) z.add(b.name, Matrix(b.value.rows(), b.value.cols()));
    return z;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& b : blocks_) out.insert(out.end(), b.value.flat().begin(), b.value.flat().end());
    return out;
  }

  void assign_flat(std::span<const double> values) {
    if (values.size() != total_size()) {
      throw DimensionError("ParameterSet::assign_flat: " + std::to_string(values.size()) +
                           " values for " + std::to_string(total_size()) + " parameters");
    }
    std::size_t k = 0;
    for (auto& b : blocks_)
      for (double& v : b.value.flat()) v = values[k++];
  }

  void require_same_layout(const ParameterSet& other, const char* what) const {
    if (other.blocks_.size() != blocks_.size()) {
      throw DimensionError(std::string(what) + ": " + std::to_string(blocks_.size()) + " blocks vs " +
                           std::to_string(other.blocks_.size()));
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (blocks_[i].name != other.blocks_[i].name) {
        throw DimensionError(std::string(what) + ": block '" + blocks_[i].name + "' vs '" +
                             other.blocks_[i].name + "'");
      }
      require_same_shape(blocks_[i].value, other.blocks_[i].value, what);
    }
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  const NamedBlock* find(std::string_view name) const {
    auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const auto& b) { return b.name == name; });
    return it == blocks_.end() ? nullptr : &*it;
  }
  Matrix& require(std::string_view name) {
    auto* b = find(name);
    if (b == nullptr) throw std::out_of_range("no parameter block '" + std::string(name) + "'");
    return const_cast<NamedBlock*>(b)->value;
  }

  std::vector<NamedBlock> blocks_;
};

// JSON parameter document: {"blocks": [{"name", "rows", "cols", "data": [...]}, ...]}.
// nlohmann::json prints doubles in shortest round-trip form, so values survive exactly.

inline nlohmann::json to_json(const ParameterSet& params) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : params.blocks()) {
    if (!b.value.all_finite()) throw NumericError("parameter block '" + b.name + "' is not finite");
    blocks.push_back({{"name", b.name},
                      {"rows", b.value.rows()},
                      {"cols", b.value.cols()},
                      {"data", b.value.values()}});
  }
  return {{"blocks", std::move(blocks)}};
}

inline ParameterSet parameter_set_from_json(const nlohmann::json& doc) {
  ParameterSet params;
  for (const auto& b : doc.at("blocks")) {
    auto rows = b.at("rows").get<std::size_t>();
    auto cols = b.at("cols").get<std::size_t>();
    params.add(b.at("name").get<std::string>(), Matrix(rows, cols, b.at("data").get<std::vector<double>>()));
  }
  return params;
}

}  // namespace rmdl
