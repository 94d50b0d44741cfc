// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fexpr/errors.hpp"
#include "fexpr/landmark_io.hpp"
#include "fexpr/pair_topology.hpp"

namespace fexpr {

/// Euclidean distance in pixels.
inline double pair_distance(Point2 a, Point2 b) noexcept {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

/// arctan(dx / dy) in radians.
///
/// dy == 0 takes the limit sign(dx) * pi/2; coincident points give 0.
inline double pair_angle(Point2 a, Point2 b) noexcept {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  if (dy == 0.0) {
    if (dx == 0.0)
      return 0.0;
    return dx > 0.0 ? std::numbers::pi / 2 : -std::numbers::pi / 2;
  }
  return std::atan(dx / dy);
}

struct FrameFeatures {
  std::vector<double> distances;
  std::vector<double> angles;
  std::uint64_t topology_fingerprint = 0;
};

/// (N-1) x 2P matrix: distance differences in columns [0, P), angle differences in [P, 2P).
struct FeatureTensor {
  Eigen::MatrixXd values;
  std::uint64_t topology_fingerprint = 0;

  Eigen::Index rows() const noexcept { return values.rows(); }
  Eigen::Index cols() const noexcept { return values.cols(); }
};

inline void check_frame_covers(std::size_t point_count, const PairTopology &topo) {
  if (static_cast<long>(point_count) <= topo.subset.max_index())
    throw SchemaError("frame has " + std::to_string(point_count) +
                      " points but the topology references landmark " +
                      std::to_string(topo.subset.max_index()));
}

/// Allocation-free kernel: writes topo.size() distances and angles.
inline void frame_features_into(std::span<const Point2> points, const PairTopology &topo,
                                std::span<double> distances, std::span<double> angles) {
  check_frame_covers(points.size(), topo);
  if (distances.size() != topo.size() || angles.size() != topo.size())
    throw ShapeError("output spans must hold one value per pair");
  const int *mesh = topo.subset.indices.data();
  const LandmarkPair *pairs = topo.pairs.data();
  const std::size_t count = topo.pairs.size();
  for (std::size_t k = 0; k < count; ++k) {
    const Point2 a = points[static_cast<std::size_t>(mesh[pairs[k].first])];
    const Point2 b = points[static_cast<std::size_t>(mesh[pairs[k].second])];
    distances[k] = pair_distance(a, b);
    angles[k] = pair_angle(a, b);
  }
}

inline FrameFeatures frame_features(const LandmarkFrame &frame, const PairTopology &topo) {
  FrameFeatures out;
  out.distances.resize(topo.size());
  out.angles.resize(topo.size());
  out.topology_fingerprint = topo.fingerprint();
  frame_features_into(frame.points, topo, out.distances, out.angles);
  return out;
}

/// Row t holds features(frame t+1) - features(frame t). Angle differences are not wrapped.
inline FeatureTensor sequence_features(std::span<const LandmarkFrame> frames,
                                       const PairTopology &topo) {
  if (frames.size() < 2)
    throw InsufficientFramesError("sequence_features needs at least 2 frames, got " +
                                  std::to_string(frames.size()));
  const std::size_t point_count = frames.front().points.size();
  for (const auto &f : frames)
    if (f.points.size() != point_count)
      throw SchemaError("frames in one sequence must have equal point counts");

  const std::size_t p = topo.size();
  const auto n = static_cast<Eigen::Index>(frames.size());
  FeatureTensor tensor;
  tensor.topology_fingerprint = topo.fingerprint();
  tensor.values.resize(n - 1, static_cast<Eigen::Index>(2 * p));

  std::vector<double> prev_d(p), prev_a(p), cur_d(p), cur_a(p);
  frame_features_into(frames[0].points, topo, prev_d, prev_a);
  for (Eigen::Index t = 1; t < n; ++t) {
    frame_features_into(frames[static_cast<std::size_t>(t)].points, topo, cur_d, cur_a);
    for (std::size_t k = 0; k < p; ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      tensor.values(t - 1, col) = cur_d[k] - prev_d[k];
      tensor.values(t - 1, col + static_cast<Eigen::Index>(p)) = cur_a[k] - prev_a[k];
    }
    std::swap(prev_d, cur_d);
    std::swap(prev_a, cur_a);
  }
  return tensor;
}

/// Mean over pairs of (last.distance - first.distance), in pixels.
inline double mean_distance_diff(const FrameFeatures &first, const FrameFeatures &last) {
  if (first.topology_fingerprint != last.topology_fingerprint ||
      first.distances.size() != last.distances.size())
    throw ShapeError("mean_distance_diff: frame features come from different topologies");
  if (first.distances.empty())
    return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < first.distances.size(); ++k)
    sum += last.distances[k] - first.distances[k];
  return sum / static_cast<double>(first.distances.size());
}

/// Key-frame reduction followed by temporal differencing.
inline FeatureTensor record_features(const SequenceRecord &record, const PairTopology &topo,
                                     std::size_t key_count = kKeyFrameCount) {
  const auto frames = key_frames(record, key_count);
  return sequence_features(frames, topo);
}

} // namespace fexpr
