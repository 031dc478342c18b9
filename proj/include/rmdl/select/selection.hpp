#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rmdl/select/instance_bag.hpp"
#include "rmdl/select/nms.hpp"
#include "rmdl/slide/slide.hpp"
#include "rmdl/tiling/probability_map.hpp"

namespace rmdl {

struct SelectionConfig {
  std::size_t m_prime = 100;
  double nms_overlap = 0.68;
  std::uint32_t patch_extent = 4;  // patch side in cells

  void validate() const {
    if (m_prime < 1) throw ConfigError("selection: m_prime must be >= 1");
    if (!(nms_overlap > 0.0 && nms_overlap < 1.0)) throw ConfigError("selection: nms_overlap must be in (0, 1)");
    if (patch_extent < 1) throw ConfigError("selection: patch_extent must be >= 1");
  }
  std::size_t bag_size() const noexcept { return kNumGrades * m_prime; }
};

class EmptySelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-channel NMS over tissue cells, k = m_prime each, concatenated as
/// normal, dysplasia, cancer.
inline std::vector<Candidate> select_discriminative_instances(const ProbabilityMap& map, const SelectionConfig& cfg) {
  cfg.validate();
  std::vector<Candidate> out;
  for (auto g : kAllGrades) {
    std::vector<Candidate> pool;
    for (std::uint32_t y = 0; y < map.height; ++y)
      for (std::uint32_t x = 0; x < map.width; ++x)
        if (map.is_tissue({x, y})) pool.push_back({{x, y}, map.at({x, y}, g), g});
    if (pool.empty()) throw EmptySelectionError("select_discriminative_instances: map has no tissue cells");
    const auto kept = nms_select(std::move(pool), cfg.nms_overlap, cfg.m_prime, cfg.patch_extent);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

/// Brings every channel to exactly m_prime entries. A short channel repeats its own
/// best selection; an empty one repeats the best selection over all channels.
inline std::vector<Candidate> pad_selections(const std::vector<Candidate>& selections, std::size_t m_prime) {
  if (selections.empty()) throw EmptySelectionError("pad_selections: no selections");
  const Candidate* global = &selections.front();
  for (const auto& c : selections)
    if (c.score > global->score) global = &c;
  std::vector<Candidate> out;
  out.reserve(kNumGrades * m_prime);
  for (auto g : kAllGrades) {
    std::vector<Candidate> channel;
    for (const auto& c : selections)
      if (c.channel == g) channel.push_back(c);
    if (channel.size() > m_prime) throw EmptySelectionError("pad_selections: channel has more than m_prime selections");
    const Candidate fill = channel.empty() ? *global : channel.front();
    while (channel.size() < m_prime) channel.push_back(fill);
    out.insert(out.end(), channel.begin(), channel.end());
  }
  return out;
}

using FeatureSource = std::function<std::vector<double>(Cell)>;

/// One feature row per padded selection, rounded to float32 so the bag survives
/// serialization unchanged.
inline InstanceBag build_bag(const std::string& slide_id, const std::vector<Candidate>& selections,
                             const FeatureSource& features, Grade label, std::size_t m_prime) {
  const auto padded = pad_selections(selections, m_prime);
  InstanceBag bag;
  bag.slide_id = slide_id;
  bag.label = label;
  for (std::size_t i = 0; i < padded.size(); ++i) {
    const auto f = features(padded[i].cell);
    if (i == 0) bag.features = Matrix(padded.size(), f.size());
    if (f.size() != bag.dim() || f.empty()) {
      throw DimensionError("build_bag: feature length " + std::to_string(f.size()) + " at row " + std::to_string(i) +
                           ", expected " + std::to_string(bag.dim()));
    }
    for (std::size_t j = 0; j < f.size(); ++j) bag.features(i, j) = static_cast<double>(static_cast<float>(f[j]));
    bag.provenance.push_back({padded[i].channel, padded[i].cell, padded[i].score});
  }
  return bag;
}

inline InstanceBag build_bag(const SyntheticSlide& slide, const std::vector<Candidate>& selections,
                             const FeatureModel& model, std::size_t m_prime) {
  return build_bag(slide.id, selections, [&](Cell c) { return model.cell_features(slide, c); }, slide.label, m_prime);
}

}  // namespace rmdl
