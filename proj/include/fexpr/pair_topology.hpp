// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fexpr/errors.hpp"
#include "fexpr/landmark_io.hpp"

namespace fexpr {

/// Number of points produced by the face-mesh landmark model.
inline constexpr int kMeshLandmarkCount = 478;

enum class FaceRegion { LeftEye, RightEye, LeftEyebrow, RightEyebrow, Nose, Mouth, LowerJaw };

inline constexpr std::array<FaceRegion, 7> kAllRegions = {
    FaceRegion::LeftEye, FaceRegion::RightEye, FaceRegion::LeftEyebrow, FaceRegion::RightEyebrow,
    FaceRegion::Nose,    FaceRegion::Mouth,    FaceRegion::LowerJaw};

inline std::string_view to_string(FaceRegion region) {
  switch (region) {
  case FaceRegion::LeftEye: return "left_eye";
  case FaceRegion::RightEye: return "right_eye";
  case FaceRegion::LeftEyebrow: return "left_eyebrow";
  case FaceRegion::RightEyebrow: return "right_eyebrow";
  case FaceRegion::Nose: return "nose";
  case FaceRegion::Mouth: return "mouth";
  case FaceRegion::LowerJaw: return "lower_jaw";
  }
  return "unknown";
}

inline FaceRegion parse_region(std::string_view name) {
  for (auto r : kAllRegions)
    if (to_string(r) == name)
      return r;
  throw SchemaError("unknown face region '" + std::string(name) + "'");
}

enum class Preset { P61, P122, P250, Custom };

inline std::string_view to_string(Preset preset) {
  switch (preset) {
  case Preset::P61: return "61";
  case Preset::P122: return "122";
  case Preset::P250: return "250";
  case Preset::Custom: return "custom";
  }
  return "unknown";
}

inline Preset parse_preset(std::string_view name) {
  for (auto p : {Preset::P61, Preset::P122, Preset::P250, Preset::Custom})
    if (to_string(p) == name)
      return p;
  throw ConfigurationError("unknown preset '" + std::string(name) + "' (expected 61, 122 or 250)");
}

enum class PairMode { Full, AUGrouped };

inline std::string_view to_string(PairMode mode) {
  return mode == PairMode::Full ? "full" : "au";
}

inline PairMode parse_pair_mode(std::string_view name) {
  if (name == "full")
    return PairMode::Full;
  if (name == "au")
    return PairMode::AUGrouped;
  throw ConfigurationError("unknown pair mode '" + std::string(name) + "' (expected full or au)");
}

// ---------------------------------------------------------------------------
// FACS categories
// ---------------------------------------------------------------------------

enum class AUCategoryId { Cat1 = 1, Cat2, Cat3, Cat4, Cat5 };

inline std::string to_string(AUCategoryId id) {
  return "cat" + std::to_string(static_cast<int>(id));
}

struct AUCategory {
  AUCategoryId id;
  std::vector<FaceRegion> regions;
  std::vector<int> action_units;
};

/// The five landmark grouping categories and the action units they cover.
inline const std::array<AUCategory, 5> &au_categories() {
  using R = FaceRegion;
  static const std::array<AUCategory, 5> table = {{
      {AUCategoryId::Cat1, {R::LeftEye, R::LeftEyebrow, R::RightEye, R::RightEyebrow}, {1, 2, 3, 4, 5}},
      {AUCategoryId::Cat2, {R::LeftEye, R::RightEye, R::Nose}, {6}},
      {AUCategoryId::Cat3, {R::LeftEye, R::LeftEyebrow, R::RightEye, R::RightEyebrow, R::Nose}, {7, 9}},
      {AUCategoryId::Cat4, {R::Nose, R::Mouth, R::LowerJaw}, {12, 14, 15, 16, 23, 26}},
      {AUCategoryId::Cat5, {R::LeftEye, R::RightEye, R::Nose, R::Mouth}, {20}},
  }};
  return table;
}

inline const AUCategory &au_category(AUCategoryId id) {
  return au_categories()[static_cast<std::size_t>(id) - 1];
}

inline std::vector<AUCategoryId> all_categories() {
  return {AUCategoryId::Cat1, AUCategoryId::Cat2, AUCategoryId::Cat3, AUCategoryId::Cat4,
          AUCategoryId::Cat5};
}

/// Categories each emotion's action units require.
inline std::vector<AUCategoryId> categories_for_emotion(EmotionLabel emotion) {
  using C = AUCategoryId;
  switch (emotion) {
  case EmotionLabel::Anger: return {C::Cat1, C::Cat3, C::Cat4};
  case EmotionLabel::Contempt: return {C::Cat4};
  case EmotionLabel::Disgust: return {C::Cat3, C::Cat4};
  case EmotionLabel::Fear: return {C::Cat1, C::Cat3, C::Cat4, C::Cat5};
  case EmotionLabel::Happiness: return {C::Cat2, C::Cat4};
  case EmotionLabel::Sadness: return {C::Cat1, C::Cat4};
  case EmotionLabel::Surprise: return {C::Cat1, C::Cat4};
  }
  return {};
}

/// Action units associated with each emotion (reference data).
inline std::vector<int> action_units_for_emotion(EmotionLabel emotion) {
  switch (emotion) {
  case EmotionLabel::Anger: return {4, 5, 7, 23};
  case EmotionLabel::Contempt: return {12, 14};
  case EmotionLabel::Disgust: return {9, 15, 16};
  case EmotionLabel::Fear: return {1, 2, 4, 5, 7, 20, 26};
  case EmotionLabel::Happiness: return {6, 12};
  case EmotionLabel::Sadness: return {1, 4, 15};
  case EmotionLabel::Surprise: return {1, 2, 5, 26};
  }
  return {};
}

/// Union of required categories, sorted ascending.
inline std::vector<AUCategoryId> categories_for_emotions(std::span<const EmotionLabel> emotions) {
  if (emotions.empty())
    throw ConfigurationError("categories_for_emotions needs at least one emotion");
  std::set<AUCategoryId> acc;
  for (auto e : emotions)
    for (auto c : categories_for_emotion(e))
      acc.insert(c);
  return {acc.begin(), acc.end()};
}

// ---------------------------------------------------------------------------
// Landmark subsets
// ---------------------------------------------------------------------------

struct LandmarkSubset {
  Preset preset = Preset::Custom;
  /// Mesh indices, in feature order.
  std::vector<int> indices;
  /// Region of indices[k].
  std::vector<FaceRegion> regions;

  std::size_t size() const noexcept { return indices.size(); }

  std::optional<FaceRegion> region_of(int mesh_index) const {
    for (std::size_t k = 0; k < indices.size(); ++k)
      if (indices[k] == mesh_index)
        return regions[k];
    return std::nullopt;
  }

  int max_index() const {
    return indices.empty() ? -1 : *std::max_element(indices.begin(), indices.end());
  }
};

namespace detail {

struct RegionPool {
  FaceRegion region;
  std::vector<int> indices;
  std::array<int, 3> take; // per preset: P61, P122, P250
};

// Curated face-mesh indices per region, most salient first. Presets take a
// prefix of each pool, so P61 is a subset of P122, which is a subset of P250.
inline const std::vector<RegionPool> &region_pools() {
  using R = FaceRegion;
  static const std::vector<RegionPool> pools = {
      {R::RightEye,
       {33,  133, 159, 145, 160, 144, 158, 153, 7,   163, 154, 155, 173, 157, 161, 246, 468, 469,
        470, 471, 472, 130, 25,  110, 24,  23,  22,  26,  112, 243, 190, 56,  28,  27,  29},
       {8, 16, 35}},
      {R::LeftEye,
       {263, 362, 386, 374, 387, 373, 385, 380, 249, 390, 381, 382, 398, 384, 388, 466, 473, 474,
        475, 476, 477, 359, 255, 339, 254, 253, 252, 256, 341, 463, 414, 286, 258, 257, 259},
       {8, 16, 35}},
      {R::RightEyebrow,
       {70, 63, 105, 66, 107, 46, 53, 52, 65, 55, 124, 113, 225, 224, 223, 222, 221, 156, 143, 111},
       {5, 10, 20}},
      {R::LeftEyebrow,
       {300, 293, 334, 296, 336, 276, 283, 282, 295, 285, 353, 342, 445, 444, 443, 442, 441, 383,
        372, 340},
       {5, 10, 20}},
      {R::Nose,
       {1,   4,   5,   6,   168, 197, 195, 2,   98,  327, 19,  94,  97,  326, 45,  275, 48,
        278, 64,  294, 115, 344, 220, 440, 49,  279, 129, 358, 102, 331, 59,  289, 235, 455,
        218, 438, 237, 457, 44,  274, 125, 354, 141, 370, 241, 461, 242, 462, 20,  250},
       {9, 20, 50}},
      {R::Mouth,
       {61,  291, 0,   17,  13,  14,  78,  308, 37,  267, 84,  314, 81,  311, 178, 402,
        40,  270, 91,  321, 80,  310, 88,  318, 39,  269, 181, 405, 82,  312, 87,  317,
        185, 409, 146, 375, 191, 415, 95,  324},
       {16, 30, 40}},
      {R::LowerJaw,
       {152, 148, 377, 176, 400, 149, 378, 150, 379, 136, 365, 172, 397, 58,  288, 132, 361,
        175, 199, 200, 18,  171, 396, 140, 369, 32,  262, 208, 428, 201, 421, 194, 418, 83,
        313, 182, 406, 204, 424, 106, 335, 43,  273, 57,  287, 202, 422, 210, 430, 211},
       {10, 20, 50}},
  };
  return pools;
}

} // namespace detail

/// Checks unique, in-range indices and one region per index.
inline void validate_subset(const LandmarkSubset &subset) {
  if (subset.indices.size() != subset.regions.size())
    throw SchemaError("subset indices and regions differ in length");
  std::set<int> seen;
  for (int idx : subset.indices) {
    if (idx < 0 || idx >= kMeshLandmarkCount)
      throw SchemaError("landmark index " + std::to_string(idx) + " outside the 478-point mesh");
    if (!seen.insert(idx).second)
      throw SchemaError("duplicate landmark index " + std::to_string(idx));
  }
  const std::map<Preset, std::size_t> expected = {{Preset::P61, 61}, {Preset::P122, 122}, {Preset::P250, 250}};
  if (auto it = expected.find(subset.preset); it != expected.end() && it->second != subset.size())
    throw SchemaError("preset " + std::string(to_string(subset.preset)) + " must have " +
                      std::to_string(it->second) + " landmarks, has " + std::to_string(subset.size()));
}

inline LandmarkSubset builtin_subset(Preset preset) {
  if (preset == Preset::Custom)
    throw ConfigurationError("custom subsets are loaded from a file, not built in");
  const auto slot = static_cast<std::size_t>(preset);
  LandmarkSubset subset;
  subset.preset = preset;
  for (const auto &pool : detail::region_pools()) {
    for (int k = 0; k < pool.take[slot]; ++k) {
      subset.indices.push_back(pool.indices[static_cast<std::size_t>(k)]);
      subset.regions.push_back(pool.region);
    }
  }
  return subset;
}

inline json subset_to_json(const LandmarkSubset &subset) {
  json regions = json::object();
  for (auto r : kAllRegions) {
    json members = json::array();
    for (std::size_t k = 0; k < subset.size(); ++k)
      if (subset.regions[k] == r)
        members.push_back(subset.indices[k]);
    regions[std::string(to_string(r))] = std::move(members);
  }
  return json{{"format", "fexpr-landmark-subset"},
              {"version", 1},
              {"preset", std::string(to_string(subset.preset))},
              {"count", subset.size()},
              {"indices", subset.indices},
              {"regions", std::move(regions)}};
}

inline LandmarkSubset subset_from_json(const json &doc) {
  LandmarkSubset subset;
  try {
    subset.preset = parse_preset(doc.at("preset").get<std::string>());
    subset.indices = doc.at("indices").get<std::vector<int>>();
    std::map<int, FaceRegion> region_of;
    for (const auto &[name, members] : doc.at("regions").items()) {
      const auto region = parse_region(name);
      for (int idx : members.get<std::vector<int>>())
        if (!region_of.emplace(idx, region).second)
          throw SchemaError("landmark " + std::to_string(idx) + " assigned to two regions");
    }
    for (int idx : subset.indices) {
      auto it = region_of.find(idx);
      if (it == region_of.end())
        throw SchemaError("landmark " + std::to_string(idx) + " has no region");
      subset.regions.push_back(it->second);
    }
  } catch (const json::exception &e) {
    throw SchemaError(std::string("subset: ") + e.what());
  } catch (const ConfigurationError &e) {
    throw SchemaError(std::string("subset: ") + e.what());
  }
  validate_subset(subset);
  return subset;
}

inline LandmarkSubset load_subset(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open subset file " + path.string());
  try {
    return subset_from_json(json::parse(in));
  } catch (const json::parse_error &e) {
    throw ParseError(1, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pair topology
// ---------------------------------------------------------------------------

/// Positions into LandmarkSubset::indices, first < second.
struct LandmarkPair {
  std::uint32_t first;
  std::uint32_t second;

  friend auto operator<=>(const LandmarkPair &, const LandmarkPair &) = default;
};

struct PairTopology {
  std::vector<LandmarkPair> pairs;
  PairMode mode = PairMode::Full;
  LandmarkSubset subset;
  std::vector<AUCategoryId> categories;

  std::size_t size() const noexcept { return pairs.size(); }
  std::size_t feature_count() const noexcept { return 2 * pairs.size(); }

  /// FNV-1a over mode, subset indices and the pair list.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    };
    mix(0x66657870727470ULL); // format tag
    mix(static_cast<std::uint64_t>(mode));
    mix(subset.indices.size());
    for (int idx : subset.indices)
      mix(static_cast<std::uint64_t>(idx));
    mix(pairs.size());
    for (const auto &p : pairs)
      mix((static_cast<std::uint64_t>(p.first) << 32) | p.second);
    return h;
  }
};

inline std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

inline std::uint64_t parse_fingerprint(const std::string &hex) {
  if (hex.size() != 16 || hex.find_first_not_of("0123456789abcdef") != std::string::npos)
    throw SchemaError("malformed topology fingerprint '" + hex + "'");
  return std::stoull(hex, nullptr, 16);
}

/// Lexicographic pair list over the subset.
///
/// Full mode yields all C(n,2) pairs. AUGrouped mode yields the deduplicated
/// union of within-category pairs, so no pair joins two landmarks that share no
/// category.
inline PairTopology enumerate_pairs(const LandmarkSubset &subset, PairMode mode,
                                    std::span<const AUCategoryId> categories) {
  validate_subset(subset);
  const std::size_t n = subset.size();
  PairTopology topo;
  topo.mode = mode;
  topo.subset = subset;

  if (mode == PairMode::Full) {
    topo.pairs.reserve(n * (n > 0 ? n - 1 : 0) / 2);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j)
        topo.pairs.push_back({i, j});
    return topo;
  }

  if (categories.empty())
    throw ConfigurationError("AU-grouped topology needs at least one category");
  topo.categories.assign(categories.begin(), categories.end());
  std::sort(topo.categories.begin(), topo.categories.end());
  topo.categories.erase(std::unique(topo.categories.begin(), topo.categories.end()),
                        topo.categories.end());

  std::vector<char> linked(n * n, 0);
  for (auto cat_id : topo.categories) {
    const auto &cat = au_category(cat_id);
    for (auto region : cat.regions)
      if (std::find(subset.regions.begin(), subset.regions.end(), region) == subset.regions.end())
        throw ConfigurationError(to_string(cat_id) + " is empty for this subset: region '" +
                                 std::string(to_string(region)) + "' has no landmarks");
    std::vector<std::uint32_t> members;
    for (std::uint32_t k = 0; k < n; ++k)
      if (std::find(cat.regions.begin(), cat.regions.end(), subset.regions[k]) != cat.regions.end())
        members.push_back(k);
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        linked[members[a] * n + members[b]] = 1;
  }
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = i + 1; j < n; ++j)
      if (linked[i * n + j])
        topo.pairs.push_back({i, j});
  return topo;
}

/// Default grouping uses all five categories.
inline PairTopology enumerate_pairs(const LandmarkSubset &subset, PairMode mode) {
  const auto cats = all_categories();
  return enumerate_pairs(subset, mode, cats);
}

inline PairTopology builtin_topology(Preset preset, PairMode mode) {
  return enumerate_pairs(builtin_subset(preset), mode);
}

inline json topology_to_json(const PairTopology &topo) {
  json pairs = json::array();
  for (const auto &p : topo.pairs)
    pairs.push_back({p.first, p.second});
  json cats = json::array();
  for (auto c : topo.categories)
    cats.push_back(to_string(c));
  return json{{"mode", std::string(to_string(topo.mode))},
              {"preset", std::string(to_string(topo.subset.preset))},
              {"fingerprint", fingerprint_hex(topo.fingerprint())},
              {"categories", std::move(cats)},
              {"pair_count", topo.size()},
              {"pairs", std::move(pairs)}};
}

} // namespace fexpr
