#pragma once

// On-disk dataset layout:
//
//   <dir>/manifest.json        version, feature dim, grade names, generation config,
//                              class counts, slide records, bag list
//   <dir>/bags/<id>.bin        one instance bag per slide (format below)
//   <dir>/provenance.csv       slide_id,index,channel,x,y,score for every bag row
//
// Bag file, little-endian:
//   16 bytes  magic "RMDLBAG1" padded with NUL
//   u32 m, u32 D, u8 label, 7 pad bytes
//   m*D IEEE-754 binary32, row-major
//   u32 CRC-32 of the float payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "rmdl/io/files.hpp"
#include "rmdl/select/instance_bag.hpp"
#include "rmdl/slide/slide.hpp"

namespace rmdl {

inline constexpr char kBagMagic[16] = {'R', 'M', 'D', 'L', 'B', 'A', 'G', '1', 0, 0, 0, 0, 0, 0, 0, 0};
inline constexpr std::size_t kBagHeaderSize = 32;
inline constexpr int kDatasetVersion = 1;

class BagFormatError : public std::runtime_error {
 public:
  enum class Kind { malformed_header, truncated, checksum_mismatch, trailing_data };
  BagFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct SlideRecord {
  std::string id;
  Grade label = Grade::normal;
  std::uint32_t side = 0;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  std::string split = "train";

  friend bool operator==(const SlideRecord&, const SlideRecord&) = default;
};

struct Dataset {
  SlideGenConfig generation;
  std::vector<SlideRecord> slides;
  std::vector<InstanceBag> bags;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_bag(const InstanceBag& bag) {
  std::string out(kBagMagic, sizeof kBagMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(bag.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(bag.dim()));
  out.push_back(static_cast<char>(to_int(bag.label)));
  out.append(7, '\0');
  std::string payload;
  payload.reserve(bag.features.size() * 4);
  for (double v : bag.features.flat()) {
    const auto f = static_cast<float>(v);
    if (static_cast<double>(f) != v) {
      throw NumericError("encode_bag: feature value of bag '" + bag.slide_id + "' is not float32-representable");
    }
    detail::put_u32(payload, std::bit_cast<std::uint32_t>(f));
  }
  out += payload;
  detail::put_u32(out, crc32_of(payload));
  return out;
}

inline InstanceBag decode_bag(std::string_view bytes, std::string slide_id = {}) {
  using K = BagFormatError::Kind;
  if (bytes.size() < kBagHeaderSize) {
    throw BagFormatError(K::truncated, "bag '" + slide_id + "': file shorter than its header");
  }
  if (std::memcmp(bytes.data(), kBagMagic, sizeof kBagMagic) != 0) {
    throw BagFormatError(K::malformed_header, "bag '" + slide_id + "': bad magic");
  }
  const std::uint32_t m = detail::get_u32(bytes, 16);
  const std::uint32_t d = detail::get_u32(bytes, 20);
  const auto label = static_cast<unsigned char>(bytes[24]);
  if (label > 2) throw BagFormatError(K::malformed_header, "bag '" + slide_id + "': label out of range");
  for (std::size_t i = 25; i < kBagHeaderSize; ++i)
    if (bytes[i] != '\0') throw BagFormatError(K::malformed_header, "bag '" + slide_id + "': nonzero padding");
  const std::uint64_t payload_size = static_cast<std::uint64_t>(m) * d * 4;
  const std::uint64_t expected = kBagHeaderSize + payload_size + 4;
  if (bytes.size() < expected) throw BagFormatError(K::truncated, "bag '" + slide_id + "': truncated payload");
  if (bytes.size() > expected) throw BagFormatError(K::trailing_data, "bag '" + slide_id + "': trailing bytes");
  const std::string_view payload = bytes.substr(kBagHeaderSize, payload_size);
  if (crc32_of(payload) != detail::get_u32(bytes, kBagHeaderSize + payload_size)) {
    throw BagFormatError(K::checksum_mismatch, "bag '" + slide_id + "': checksum mismatch");
  }
  InstanceBag bag;
  bag.slide_id = std::move(slide_id);
  bag.label = static_cast<Grade>(label);
  bag.features = Matrix(m, d);
  auto out = bag.features.flat();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32(payload, 4 * i)));
  return bag;
}

// ---------------------------------------------------------------- provenance CSV

inline std::string provenance_csv(const std::vector<InstanceBag>& bags) {
  std::string out = "slide_id,index,channel,x,y,score\n";
  for (const auto& bag : bags) {
    for (std::size_t i = 0; i < bag.provenance.size(); ++i) {
      const auto& p = bag.provenance[i];
      out += bag.slide_id + ',' + std::to_string(i) + ',' + std::string(grade_name(p.channel)) + ',' +
             std::to_string(p.cell.x) + ',' + std::to_string(p.cell.y) + ',' + format_double(p.score) + '\n';
    }
  }
  return out;
}

inline std::map<std::string, std::vector<Provenance>> parse_provenance_csv(std::string_view text) {
  std::map<std::string, std::vector<Provenance>> out;
  std::size_t pos = text.find('\n');
  if (pos == std::string_view::npos) return out;
  ++pos;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw IoError("provenance.csv: expected 6 fields");
    auto& rows = out[std::string(f[0])];
    if (std::stoul(std::string(f[1])) != rows.size()) throw IoError("provenance.csv: rows out of order");
    rows.push_back({grade_from_name(f[2]),
                    {static_cast<std::uint32_t>(std::stoul(std::string(f[3]))),
                     static_cast<std::uint32_t>(std::stoul(std::string(f[4])))},
                    parse_double(f[5])});
  }
  return out;
}

// ---------------------------------------------------------------- manifest

inline nlohmann::json to_json(const SlideGenConfig& c) {
  return {{"side", c.side},
          {"abnormal_fraction", c.abnormal_fraction},
          {"n_blobs", c.n_blobs},
          {"class_mix", c.class_mix},
          {"noise", c.noise},
          {"confuser_rate", c.confuser_rate},
          {"feature_dim", c.feature_dim},
          {"prototype_separation", c.prototype_separation},
          {"seed", c.seed}};
}

/// Missing keys keep the values already in `c`.
inline void update_from_json(SlideGenConfig& c, const nlohmann::json& j) {
  c.side = j.value("side", c.side);
  c.abnormal_fraction = j.value("abnormal_fraction", c.abnormal_fraction);
  c.n_blobs = j.value("n_blobs", c.n_blobs);
  c.class_mix = j.value("class_mix", c.class_mix);
  c.noise = j.value("noise", c.noise);
  c.confuser_rate = j.value("confuser_rate", c.confuser_rate);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.prototype_separation = j.value("prototype_separation", c.prototype_separation);
  c.seed = j.value("seed", c.seed);
}

inline nlohmann::json manifest_json(const Dataset& ds) {
  nlohmann::json slides = nlohmann::json::array();
  std::array<std::size_t, kNumGrades> counts{};
  for (const auto& s : ds.slides) {
    ++counts[to_index(s.label)];
    slides.push_back({{"id", s.id},
                      {"label", to_int(s.label)},
                      {"side", s.side},
                      {"seed", s.seed},
                      {"index", s.index},
                      {"split", s.split}});
  }
  nlohmann::json class_counts;
  for (auto g : kAllGrades) class_counts[std::string(grade_name(g))] = counts[to_index(g)];
  nlohmann::json bags = nlohmann::json::array();
  for (const auto& b : ds.bags) bags.push_back({{"id", b.slide_id}, {"m", b.size()}, {"label", to_int(b.label)}});
  return {{"format", "rmdl-dataset"},
          {"version", kDatasetVersion},
          {"feature_dim", ds.generation.feature_dim},
          {"grades", kGradeNames},
          {"generation", to_json(ds.generation)},
          {"class_counts", class_counts},
          {"slides", slides},
          {"bags", bags}};
}

inline std::filesystem::path bag_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / "bags" / (id + ".bin");
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  bool any_provenance = false;
  for (const auto& b : ds.bags) {
    write_file_atomic(bag_path(dir, b.slide_id), encode_bag(b));
    any_provenance = any_provenance || !b.provenance.empty();
  }
  if (any_provenance) write_file_atomic(dir / "provenance.csv", provenance_csv(ds.bags));
  write_file_atomic(dir / "manifest.json", manifest_json(ds).dump(2) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw IoError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  if (j.value("format", "") != "rmdl-dataset" || j.value("version", 0) != kDatasetVersion) {
    throw IoError("manifest.json: unsupported format or version");
  }
  Dataset ds;
  update_from_json(ds.generation, j.at("generation"));
  for (const auto& s : j.at("slides")) {
    ds.slides.push_back({s.at("id").get<std::string>(), grade_from_int(s.at("label").get<int>()),
                         s.at("side").get<std::uint32_t>(), s.at("seed").get<std::uint64_t>(),
                         s.at("index").get<std::uint64_t>(), s.at("split").get<std::string>()});
  }
  std::map<std::string, std::vector<Provenance>> provenance;
  if (std::filesystem::exists(dir / "provenance.csv")) provenance = parse_provenance_csv(read_file(dir / "provenance.csv"));
  for (const auto& b : j.at("bags")) {
    const auto id = b.at("id").get<std::string>();
    auto bag = decode_bag(read_file(bag_path(dir, id)), id);
    if (auto it = provenance.find(id); it != provenance.end()) bag.provenance = std::move(it->second);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

}  // namespace rmdl
