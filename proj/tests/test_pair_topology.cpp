// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace fexpr;
using namespace fexpr::testing;

namespace {

using PairSet = std::set<std::pair<std::uint32_t, std::uint32_t>>;

// Region membership per category, written out from the category definitions.
const std::map<int, std::set<FaceRegion>> &category_regions() {
  using R = FaceRegion;
  static const std::map<int, std::set<FaceRegion>> table = {
      {1, {R::LeftEye, R::RightEye, R::LeftEyebrow, R::RightEyebrow}},
      {2, {R::LeftEye, R::RightEye, R::Nose}},
      {3, {R::LeftEye, R::RightEye, R::LeftEyebrow, R::RightEyebrow, R::Nose}},
      {4, {R::Nose, R::Mouth, R::LowerJaw}},
      {5, {R::LeftEye, R::RightEye, R::Nose, R::Mouth}},
  };
  return table;
}

// Union over categories of C(members, 2), built as explicit sets.
PairSet brute_force_union(const LandmarkSubset &subset, const std::set<int> &cats) {
  PairSet out;
  for (int c : cats) {
    std::vector<std::uint32_t> members;
    for (std::uint32_t k = 0; k < subset.size(); ++k)
      if (category_regions().at(c).count(subset.regions[k]))
        members.push_back(k);
    for (auto a : members)
      for (auto b : members)
        if (a < b)
          out.insert({a, b});
  }
  return out;
}

PairSet as_set(const PairTopology &t) {
  PairSet s;
  for (const auto &p : t.pairs)
    s.insert({p.first, p.second});
  return s;
}

LandmarkSubset synthetic_subset(std::size_t n, FaceRegion region = FaceRegion::Nose) {
  LandmarkSubset s;
  for (std::size_t k = 0; k < n; ++k) {
    s.indices.push_back(static_cast<int>(k));
    s.regions.push_back(region);
  }
  return s;
}

} // namespace

TEST(Presets, SizesRangesAndRegions) {
  const std::map<Preset, std::size_t> sizes = {{Preset::P61, 61}, {Preset::P122, 122}, {Preset::P250, 250}};
  for (const auto &[preset, n] : sizes) {
    const auto s = builtin_subset(preset);
    EXPECT_EQ(s.size(), n);
    std::set<int> unique(s.indices.begin(), s.indices.end());
    EXPECT_EQ(unique.size(), n);
    for (int idx : s.indices) {
      EXPECT_GE(idx, 0);
      EXPECT_LT(idx, kMeshLandmarkCount);
    }
    std::set<FaceRegion> regions(s.regions.begin(), s.regions.end());
    EXPECT_EQ(regions.size(), kAllRegions.size());
  }
}

TEST(Presets, SmallerPresetsAreNested) {
  const auto p61 = builtin_subset(Preset::P61);
  const auto p122 = builtin_subset(Preset::P122);
  const auto p250 = builtin_subset(Preset::P250);
  std::set<int> s122(p122.indices.begin(), p122.indices.end());
  std::set<int> s250(p250.indices.begin(), p250.indices.end());
  for (int i : p61.indices)
    EXPECT_TRUE(s122.count(i));
  for (int i : p122.indices)
    EXPECT_TRUE(s250.count(i));
}

TEST(Presets, ShippedDataFilesMatchBuiltins) {
  const std::filesystem::path dir = std::filesystem::path(FEXPR_SOURCE_DIR) / "data" / "presets";
  for (auto preset : {Preset::P61, Preset::P122, Preset::P250}) {
    const auto file = load_subset(dir / ("p" + std::string(to_string(preset)) + ".json"));
    const auto builtin = builtin_subset(preset);
    EXPECT_EQ(file.indices, builtin.indices);
    EXPECT_EQ(file.regions, builtin.regions);
    EXPECT_EQ(file.preset, preset);
  }
}

TEST(Presets, SubsetJsonRejectsBadContent) {
  auto doc = subset_to_json(builtin_subset(Preset::P61));
  auto dup = doc;
  dup["indices"][1] = dup["indices"][0];
  EXPECT_THROW(subset_from_json(dup), SchemaError);
  auto wrong_count = doc;
  wrong_count["indices"].erase(0);
  EXPECT_THROW(subset_from_json(wrong_count), SchemaError);
  auto orphan = doc;
  orphan["preset"] = "custom";
  orphan["indices"].push_back(400);
  EXPECT_THROW(subset_from_json(orphan), SchemaError);
}

TEST(Pairs, FullCountSweep) {
  for (std::size_t n = 2; n <= 300; ++n) {
    const auto t = enumerate_pairs(synthetic_subset(n), PairMode::Full);
    ASSERT_EQ(t.size(), n * (n - 1) / 2) << n;
  }
}

TEST(Pairs, BuiltinCounts) {
  EXPECT_EQ(builtin_topology(Preset::P61, PairMode::Full).size(), 1830u);
  EXPECT_EQ(builtin_topology(Preset::P122, PairMode::Full).size(), 7381u);
  EXPECT_EQ(builtin_topology(Preset::P250, PairMode::Full).size(), 31125u);
}

TEST(Pairs, AuGroupedMatchesBruteForceUnion) {
  for (auto preset : {Preset::P61, Preset::P122, Preset::P250}) {
    const auto subset = builtin_subset(preset);
    const auto au = enumerate_pairs(subset, PairMode::AUGrouped);
    const auto full = enumerate_pairs(subset, PairMode::Full);
    const auto oracle = brute_force_union(subset, {1, 2, 3, 4, 5});
    EXPECT_EQ(au.size(), oracle.size());
    EXPECT_EQ(as_set(au), oracle);
    EXPECT_LT(au.size(), full.size());
    const auto full_set = as_set(full);
    for (const auto &p : au.pairs)
      EXPECT_TRUE(full_set.count({p.first, p.second}));
  }
}

TEST(Pairs, NoPairJoinsRegionsWithoutSharedCategory) {
  const auto t = builtin_topology(Preset::P122, PairMode::AUGrouped);
  for (const auto &p : t.pairs) {
    const auto ra = t.subset.regions[p.first];
    const auto rb = t.subset.regions[p.second];
    bool shared = false;
    for (const auto &[id, regions] : category_regions())
      shared = shared || (regions.count(ra) && regions.count(rb));
    EXPECT_TRUE(shared);
  }
}

TEST(Pairs, EmotionConditionedSubsetsMatchOracle) {
  const auto subset = builtin_subset(Preset::P61);
  const auto cats = categories_for_emotions(std::vector<EmotionLabel>{EmotionLabel::Happiness});
  const auto t = enumerate_pairs(subset, PairMode::AUGrouped, cats);
  EXPECT_EQ(as_set(t), brute_force_union(subset, {2, 4}));
}

TEST(Pairs, LexicographicUniqueAndDeterministic) {
  for (auto mode : {PairMode::Full, PairMode::AUGrouped}) {
    const auto a = builtin_topology(Preset::P122, mode);
    const auto b = builtin_topology(Preset::P122, mode);
    EXPECT_EQ(topology_to_json(a).dump(), topology_to_json(b).dump());
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_LT(a.pairs[k].first, a.pairs[k].second);
      if (k) {
        EXPECT_LT(a.pairs[k - 1], a.pairs[k]);
      }
    }
  }
}

TEST(Pairs, SingleCategoryDegeneratesToFull) {
  auto s = synthetic_subset(3);
  s.regions = {FaceRegion::Nose, FaceRegion::Mouth, FaceRegion::LowerJaw};
  const std::vector<AUCategoryId> cat4 = {AUCategoryId::Cat4};
  EXPECT_EQ(enumerate_pairs(s, PairMode::AUGrouped, cat4).size(), 3u);
  EXPECT_EQ(enumerate_pairs(s, PairMode::Full).size(), 3u);
}

TEST(Pairs, MissingRegionNamesRegion) {
  auto s = synthetic_subset(4, FaceRegion::Nose);
  const std::vector<AUCategoryId> cat4 = {AUCategoryId::Cat4};
  try {
    enumerate_pairs(s, PairMode::AUGrouped, cat4);
    FAIL() << "expected ConfigurationError";
  } catch (const ConfigurationError &e) {
    EXPECT_NE(std::string(e.what()).find("mouth"), std::string::npos) << e.what();
  }
}

TEST(Pairs, FingerprintsDistinguishTopologies) {
  std::set<std::uint64_t> seen;
  for (auto preset : {Preset::P61, Preset::P122, Preset::P250})
    for (auto mode : {PairMode::Full, PairMode::AUGrouped})
      seen.insert(builtin_topology(preset, mode).fingerprint());
  EXPECT_EQ(seen.size(), 6u);
  const auto fp = builtin_topology(Preset::P61, PairMode::Full).fingerprint();
  EXPECT_EQ(parse_fingerprint(fingerprint_hex(fp)), fp);
  EXPECT_THROW(parse_fingerprint("xyz"), SchemaError);
}

TEST(Categories, EmotionTable) {
  using C = AUCategoryId;
  auto cats = [](std::initializer_list<EmotionLabel> e) {
    return categories_for_emotions(std::vector<EmotionLabel>(e));
  };
  EXPECT_EQ(cats({EmotionLabel::Happiness}), (std::vector<C>{C::Cat2, C::Cat4}));
  EXPECT_EQ(cats({EmotionLabel::Contempt}), (std::vector<C>{C::Cat4}));
  EXPECT_EQ(cats({EmotionLabel::Anger}), (std::vector<C>{C::Cat1, C::Cat3, C::Cat4}));
  EXPECT_EQ(cats({EmotionLabel::Fear}), (std::vector<C>{C::Cat1, C::Cat3, C::Cat4, C::Cat5}));
  const std::vector<EmotionLabel> all(kAllEmotions.begin(), kAllEmotions.end());
  EXPECT_EQ(categories_for_emotions(all), all_categories());
  EXPECT_THROW(categories_for_emotions(std::vector<EmotionLabel>{}), ConfigurationError);
}

TEST(Categories, RegionsAndActionUnits) {
  for (const auto &cat : au_categories()) {
    const auto &expected = category_regions().at(static_cast<int>(cat.id));
    EXPECT_EQ(std::set<FaceRegion>(cat.regions.begin(), cat.regions.end()), expected);
  }
  EXPECT_EQ(au_category(AUCategoryId::Cat4).action_units, (std::vector<int>{12, 14, 15, 16, 23, 26}));
  EXPECT_EQ(au_category(AUCategoryId::Cat5).action_units, (std::vector<int>{20}));
}

TEST(Names, ParseRoundTrips) {
  for (auto r : kAllRegions)
    EXPECT_EQ(parse_region(to_string(r)), r);
  EXPECT_EQ(parse_preset("61"), Preset::P61);
  EXPECT_EQ(parse_pair_mode("au"), PairMode::AUGrouped);
  EXPECT_THROW(parse_preset("62"), Error);
  EXPECT_THROW(parse_pair_mode("partial"), Error);
}
