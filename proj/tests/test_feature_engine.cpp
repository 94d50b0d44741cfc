// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "support.hpp"

using namespace fexpr;
using namespace fexpr::testing;


TEST(PairDistance, Examples) {
  EXPECT_DOUBLE_EQ(pair_distance({0, 0}, {3, 4}), 5.0);
  EXPECT_DOUBLE_EQ(pair_distance({7, 2}, {7, 2}), 0.0);
  EXPECT_DOUBLE_EQ(pair_distance({1, 1}, {4, 5}), 5.0);
}

TEST(PairDistance, SymmetricNonNegative) {
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const Point2 a{rng.uniform(-500, 500), rng.uniform(-500, 500)};
    const Point2 b{rng.uniform(-500, 500), rng.uniform(-500, 500)};
    EXPECT_GE(pair_distance(a, b), 0.0);
    EXPECT_EQ(pair_distance(a, b), pair_distance(b, a));
  }
}

TEST(PairAngle, Examples) {
  EXPECT_NEAR(pair_angle({0, 0}, {1, 1}), 0.785398, 1e-6);
  EXPECT_DOUBLE_EQ(pair_angle({2, 0}, {0, 0}), std::numbers::pi / 2);
  EXPECT_DOUBLE_EQ(pair_angle({0, 0}, {2, 0}), -std::numbers::pi / 2);
  EXPECT_DOUBLE_EQ(pair_angle({3, 3}, {3, 3}), 0.0);
}

TEST(PairAngle, SymmetricAwayFromHorizontal) {
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) {
    const Point2 a{rng.uniform(-500, 500), rng.uniform(-500, 500)};
    const Point2 b{rng.uniform(-500, 500), rng.uniform(-500, 500)};
    const double t = pair_angle(a, b);
    EXPECT_EQ(t, pair_angle(b, a));
    EXPECT_GE(t, -std::numbers::pi / 2);
    EXPECT_LE(t, std::numbers::pi / 2);
  }
}

TEST(FrameFeatures, CollinearPoints) {
  LandmarkSubset s;
  s.indices = {0, 1, 2};
  s.regions = {FaceRegion::Nose, FaceRegion::Nose, FaceRegion::Nose};
  const auto topo = enumerate_pairs(s, PairMode::Full);
  const auto f = frame_features(make_frame({{0, 0}, {3, 4}, {6, 8}}, 0), topo);
  EXPECT_DOUBLE_EQ(f.distances[0], 5.0);
  EXPECT_DOUBLE_EQ(f.distances[1], 10.0);
  EXPECT_DOUBLE_EQ(f.distances[2], 5.0);
  EXPECT_DOUBLE_EQ(f.angles[0], f.angles[1]);
  EXPECT_DOUBLE_EQ(f.angles[1], f.angles[2]);
}

TEST(FrameFeatures, MatchesNaiveOracle) {
  Rng rng(8);
  for (auto preset : {Preset::P61, Preset::P122, Preset::P250})
    for (auto mode : {PairMode::Full, PairMode::AUGrouped}) {
      const auto topo = builtin_topology(preset, mode);
      for (int trial = 0; trial < 20; ++trial) {
        const auto pts = random_points(rng);
        const auto f = frame_features(make_frame(pts, 0), topo);
        const auto [d, a] = naive_frame_oracle(pts, topo.subset, mode);
        ASSERT_EQ(f.distances.size(), d.size());
        for (std::size_t k = 0; k < d.size(); ++k) {
          ASSERT_NEAR(f.distances[k], d[k], 1e-12);
          ASSERT_NEAR(f.angles[k], a[k], 1e-12);
        }
      }
    }
}

TEST(FrameFeatures, TooFewPointsIsSchemaError) {
  const auto topo = builtin_topology(Preset::P61, PairMode::Full);
  Rng rng(1);
  EXPECT_THROW(frame_features(make_frame(random_points(rng, 100), 0), topo), SchemaError);
}

TEST(SequenceFeatures, ShapeLayoutAndArithmetic) {
  LandmarkSubset s;
  s.indices = {0, 1};
  s.regions = {FaceRegion::Nose, FaceRegion::Nose};
  const auto topo = enumerate_pairs(s, PairMode::Full);
  std::vector<LandmarkFrame> frames = {make_frame({{0, 0}, {6, 8}}, 0), make_frame({{0, 0}, {0, 13}}, 1)};
  const auto t = sequence_features(frames, topo);
  ASSERT_EQ(t.rows(), 1);
  ASSERT_EQ(t.cols(), 2);
  EXPECT_DOUBLE_EQ(t.values(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(t.values(0, 1), std::atan(0.0 / -13.0) - std::atan(-6.0 / -8.0));
  EXPECT_EQ(t.topology_fingerprint, topo.fingerprint());

  Rng rng(9);
  const auto full = builtin_topology(Preset::P61, PairMode::AUGrouped);
  const auto five = random_frames(rng, 5);
  const auto t5 = sequence_features(five, full);
  EXPECT_EQ(t5.rows(), 4);
  EXPECT_EQ(t5.cols(), static_cast<Eigen::Index>(2 * full.size()));
  EXPECT_THROW(sequence_features(std::vector<LandmarkFrame>{five[0]}, full), InsufficientFramesError);
}

TEST(SequenceFeatures, RowsAreOracleDifferences) {
  Rng rng(10);
  const auto topo = builtin_topology(Preset::P61, PairMode::AUGrouped);
  const auto frames = random_frames(rng, 5);
  const auto t = sequence_features(frames, topo);
  const auto p = static_cast<Eigen::Index>(topo.size());
  for (std::size_t r = 0; r + 1 < frames.size(); ++r) {
    const auto [d0, a0] = naive_frame_oracle(frames[r].points, topo.subset, topo.mode);
    const auto [d1, a1] = naive_frame_oracle(frames[r + 1].points, topo.subset, topo.mode);
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto i = static_cast<std::size_t>(k);
      ASSERT_NEAR(t.values(static_cast<Eigen::Index>(r), k), d1[i] - d0[i], 1e-12);
      ASSERT_NEAR(t.values(static_cast<Eigen::Index>(r), p + k), a1[i] - a0[i], 1e-12);
    }
  }
}

TEST(SequenceFeatures, StaticFaceGivesZeros) {
  Rng rng(12);
  const auto topo = builtin_topology(Preset::P122, PairMode::Full);
  const auto pts = random_points(rng);
  std::vector<LandmarkFrame> frames;
  for (int k = 0; k < 5; ++k)
    frames.push_back(make_frame(pts, k));
  EXPECT_EQ(sequence_features(frames, topo).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SequenceFeatures, ReversalNegatesAndReversesRows) {
  Rng rng(13);
  const auto topo = builtin_topology(Preset::P61, PairMode::Full);
  auto frames = random_frames(rng, 5);
  const auto fwd = sequence_features(frames, topo);
  std::reverse(frames.begin(), frames.end());
  const auto rev = sequence_features(frames, topo);
  for (Eigen::Index r = 0; r < fwd.rows(); ++r)
    for (Eigen::Index c = 0; c < fwd.cols(); ++c)
      ASSERT_NEAR(rev.values(fwd.rows() - 1 - r, c), -fwd.values(r, c), 1e-12);
}

TEST(SequenceFeatures, TranslationAndScaleInvariance) {
  Rng rng(14);
  const auto topo = builtin_topology(Preset::P61, PairMode::AUGrouped);
  const auto p = static_cast<Eigen::Index>(topo.size());
  for (int trial = 0; trial < 20; ++trial) {
    const auto frames = random_frames(rng, 5);
    const auto base = sequence_features(frames, topo);
    const double tx = rng.uniform(-300, 300), ty = rng.uniform(-300, 300), s = rng.uniform(0.2, 5.0);
    auto moved = frames, scaled = frames;
    for (auto &f : moved)
      for (auto &q : f.points)
        q = {q.x + tx, q.y + ty};
    for (auto &f : scaled)
      for (auto &q : f.points)
        q = {q.x * s, q.y * s};
    const auto tm = sequence_features(moved, topo);
    const auto ts = sequence_features(scaled, topo);
    EXPECT_LT((tm.values - base.values).cwiseAbs().maxCoeff(), 1e-9);
    for (Eigen::Index r = 0; r < base.rows(); ++r)
      for (Eigen::Index k = 0; k < p; ++k) {
        ASSERT_NEAR(ts.values(r, k), s * base.values(r, k), 1e-9 * std::max(1.0, std::abs(s * base.values(r, k))));
        ASSERT_NEAR(ts.values(r, p + k), base.values(r, p + k), 1e-9 * std::max(1.0, std::abs(base.values(r, p + k))));
      }
  }
}

TEST(MeanDistanceDiff, Examples) {
  FrameFeatures a, b;
  a.distances = {1.0, 2.0, 3.0};
  b.distances = {3.0, 4.0, 5.0};
  EXPECT_DOUBLE_EQ(mean_distance_diff(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mean_distance_diff(a, b), 2.0);
  b.distances = {1.5, 1.0, 7.0};
  // (0.5 - 1.0 + 4.0) / 3
  EXPECT_DOUBLE_EQ(mean_distance_diff(a, b), 3.5 / 3.0);
  b.topology_fingerprint = 1;
  EXPECT_THROW(mean_distance_diff(a, b), ShapeError);
}

TEST(RecordFeatures, UsesKeyFrames) {
  Rng rng(15);
  const auto topo = builtin_topology(Preset::P61, PairMode::Full);
  SequenceRecord rec;
  rec.frames = random_frames(rng, 10);
  const auto t = record_features(rec, topo);
  std::vector<LandmarkFrame> picked = {rec.frames[0], rec.frames[2], rec.frames[5], rec.frames[7], rec.frames[9]};
  EXPECT_EQ(t.values, sequence_features(picked, topo).values);
}
