// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "fexpr/errors.hpp"
#include "fexpr/landmark_io.hpp"
#include "fexpr/pair_topology.hpp"
#include "fexpr/rng.hpp"

namespace fexpr {

/// How one region moves at full expression intensity.
enum class MotionKind { ShiftUp, ShiftDown, ExpandX, ExpandY, ContractX, ContractY };

struct RegionMotion {
  FaceRegion region;
  MotionKind kind;
  double weight = 1.0; // fraction of the class magnitude
};

/// Intensity envelope: neutral lead, ramp to apex, hold, decay back, neutral tail.
/// decay == 0 gives the neutral-to-apex shape of posed datasets.
struct TemporalProfile {
  std::size_t lead = 0;
  std::size_t ramp = 9;
  std::size_t hold = 0;
  std::size_t decay = 0;
  std::size_t tail = 0;

  std::size_t length() const noexcept { return lead + ramp + hold + decay + tail + 1; }

  /// Intensity in [0, 1] at frame t.
  double at(std::size_t t) const noexcept {
    if (t <= lead)
      return 0.0;
    t -= lead;
    if (t < ramp)
      return static_cast<double>(t) / static_cast<double>(ramp);
    t -= ramp;
    if (t <= hold)
      return 1.0;
    t -= hold;
    if (t < decay)
      return 1.0 - static_cast<double>(t) / static_cast<double>(decay);
    return decay == 0 ? 1.0 : 0.0;
  }
};

struct SynthSpec {
  std::size_t class_count = 5;
  std::size_t sequences_per_class = 20;
  TemporalProfile profile{};
  double magnitude_px = 6.0;
  double magnitude_jitter = 0.2; // relative, uniform +/- per sequence
  double noise_px = 0.3;
  std::uint64_t seed = 1;
  std::int64_t frame_interval_ms = 33;
  int img_w = 640;
  int img_h = 480;
  std::string id_prefix = "syn";
  std::string dataset = "synthetic";
  /// Classes map to these labels in order; defaults to the six basic emotions then contempt.
  std::vector<EmotionLabel> labels;

  std::vector<EmotionLabel> class_labels() const {
    std::vector<EmotionLabel> out = labels;
    if (out.empty()) {
      out = six_basic_emotions();
      out.push_back(EmotionLabel::Contempt);
    }
    if (class_count == 0 || class_count > out.size())
      throw ConfigurationError("synth: class_count must be in 1.." + std::to_string(out.size()));
    out.resize(class_count);
    return out;
  }
};

namespace detail {

struct RegionShape {
  double cx, cy, rx, ry;
};

inline RegionShape region_shape(FaceRegion r) {
  switch (r) {
  case FaceRegion::RightEye: return {250, 210, 28, 12};
  case FaceRegion::LeftEye: return {390, 210, 28, 12};
  case FaceRegion::RightEyebrow: return {250, 175, 38, 8};
  case FaceRegion::LeftEyebrow: return {390, 175, 38, 8};
  case FaceRegion::Nose: return {320, 265, 25, 45};
  case FaceRegion::Mouth: return {320, 335, 45, 18};
  case FaceRegion::LowerJaw: return {320, 300, 130, 120};
  }
  return {320, 250, 10, 10};
}

inline std::vector<RegionMotion> class_motion(EmotionLabel label) {
  using R = FaceRegion;
  using M = MotionKind;
  switch (label) {
  case EmotionLabel::Anger:
    return {{R::LeftEyebrow, M::ShiftDown}, {R::RightEyebrow, M::ShiftDown}, {R::Mouth, M::ContractX, 0.6}};
  case EmotionLabel::Disgust:
    return {{R::Nose, M::ShiftUp, 0.6}, {R::Mouth, M::ShiftUp}, {R::Mouth, M::ContractX, 0.3}};
  case EmotionLabel::Fear:
    return {{R::LeftEye, M::ExpandY}, {R::RightEye, M::ExpandY}, {R::Mouth, M::ExpandX, 0.6}};
  case EmotionLabel::Happiness:
    return {{R::Mouth, M::ExpandX}, {R::LeftEye, M::ContractY, 0.5}, {R::RightEye, M::ContractY, 0.5}};
  case EmotionLabel::Sadness:
    return {{R::Mouth, M::ShiftDown}, {R::LeftEyebrow, M::ContractX, 0.6}, {R::RightEyebrow, M::ContractX, 0.6}};
  case EmotionLabel::Surprise:
    return {{R::LeftEyebrow, M::ShiftUp}, {R::RightEyebrow, M::ShiftUp}, {R::LowerJaw, M::ShiftDown}};
  case EmotionLabel::Contempt:
    return {{R::Mouth, M::ExpandY, 0.7}, {R::Nose, M::ContractX, 0.5}};
  }
  return {};
}

} // namespace detail

/// Shared neutral face: every one of the 478 mesh points, in pixels.
///
/// Curated region landmarks sit inside their region's ellipse; the remaining
/// mesh points are scattered over the face oval.
inline std::vector<Point2> neutral_template() {
  std::vector<Point2> pts(kMeshLandmarkCount);
  std::vector<char> placed(kMeshLandmarkCount, 0);
  const double golden = 0.6180339887498949;
  for (const auto &pool : detail::region_pools()) {
    const auto shape = detail::region_shape(pool.region);
    const auto n = pool.indices.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double u = std::fmod(static_cast<double>(k) * golden, 1.0);
      double x, y;
      if (pool.region == FaceRegion::LowerJaw) {
        // lower arc of the face oval, with inner rows for chin points
        const double theta = std::numbers::pi * (0.12 + 0.76 * u);
        const double shrink = 1.0 - 0.35 * std::fmod(static_cast<double>(k) * 0.3819660112501051, 1.0);
        x = shape.cx - shape.rx * shrink * std::cos(theta);
        y = shape.cy + shape.ry * shrink * std::sin(theta);
      } else {
        const double theta = 2.0 * std::numbers::pi * u;
        const double radius = 1.0 - 0.6 * std::fmod(static_cast<double>(k) * 0.3819660112501051, 1.0);
        x = shape.cx + shape.rx * radius * std::cos(theta);
        y = shape.cy + shape.ry * radius * std::sin(theta);
      }
      const auto idx = static_cast<std::size_t>(pool.indices[k]);
      pts[idx] = {x, y};
      placed[idx] = 1;
    }
  }
  Rng rng(478);
  for (std::size_t idx = 0; idx < pts.size(); ++idx) {
    if (placed[idx])
      continue;
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double radius = std::sqrt(rng.uniform(0.05, 1.0));
    pts[idx] = {320.0 + 150.0 * radius * std::cos(theta), 250.0 + 190.0 * radius * std::sin(theta)};
  }
  return pts;
}

/// Displacement of one point for a region motion at unit intensity.
inline Point2 motion_offset(const RegionMotion &m, Point2 p, double magnitude) {
  const auto s = detail::region_shape(m.region);
  const double nx = std::clamp((p.x - s.cx) / s.rx, -1.5, 1.5);
  const double ny = std::clamp((p.y - s.cy) / s.ry, -1.5, 1.5);
  const double a = magnitude * m.weight;
  switch (m.kind) {
  case MotionKind::ShiftUp: return {0.0, -a};
  case MotionKind::ShiftDown: return {0.0, a};
  case MotionKind::ExpandX: return {a * nx, 0.0};
  case MotionKind::ExpandY: return {0.0, a * ny};
  case MotionKind::ContractX: return {-a * nx, 0.0};
  case MotionKind::ContractY: return {0.0, -a * ny};
  }
  return {};
}

/// Deterministic corpus: class c deforms its own region set along the profile.
inline std::vector<SequenceRecord> generate_corpus(const SynthSpec &spec) {
  const auto labels = spec.class_labels();
  if (spec.profile.length() < 2)
    throw ConfigurationError("synth: profile needs at least two frames");
  const auto base = neutral_template();

  std::vector<FaceRegion> region_of(kMeshLandmarkCount);
  std::vector<char> has_region(kMeshLandmarkCount, 0);
  for (const auto &pool : detail::region_pools())
    for (int idx : pool.indices) {
      region_of[static_cast<std::size_t>(idx)] = pool.region;
      has_region[static_cast<std::size_t>(idx)] = 1;
    }

  std::vector<SequenceRecord> out;
  Rng rng(spec.seed);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const auto motions = detail::class_motion(labels[c]);
    for (std::size_t s = 0; s < spec.sequences_per_class; ++s) {
      SequenceRecord rec;
      rec.seq_id = spec.id_prefix + "_c" + std::to_string(c) + "_s" + std::to_string(s);
      rec.label = labels[c];
      rec.dataset = spec.dataset;
      const double magnitude = spec.magnitude_px * (1.0 + spec.magnitude_jitter * rng.uniform(-1.0, 1.0));

      std::vector<Point2> apex_offset(base.size(), Point2{});
      for (std::size_t idx = 0; idx < base.size(); ++idx) {
        if (!has_region[idx])
          continue;
        for (const auto &m : motions)
          if (m.region == region_of[idx]) {
            const auto d = motion_offset(m, base[idx], magnitude);
            apex_offset[idx].x += d.x;
            apex_offset[idx].y += d.y;
          }
      }

      for (std::size_t t = 0; t < spec.profile.length(); ++t) {
        const double w = spec.profile.at(t);
        LandmarkFrame frame;
        frame.seq_id = rec.seq_id;
        frame.frame_idx = static_cast<std::int64_t>(t);
        frame.t_ms = static_cast<std::int64_t>(t) * spec.frame_interval_ms;
        frame.img_w = spec.img_w;
        frame.img_h = spec.img_h;
        frame.points.resize(base.size());
        for (std::size_t idx = 0; idx < base.size(); ++idx) {
          frame.points[idx].x = base[idx].x + w * apex_offset[idx].x;
          frame.points[idx].y = base[idx].y + w * apex_offset[idx].y;
          if (spec.noise_px > 0.0) {
            frame.points[idx].x += spec.noise_px * rng.normal();
            frame.points[idx].y += spec.noise_px * rng.normal();
          }
        }
        rec.frames.push_back(std::move(frame));
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// Write one NDJSON file per sequence plus manifest.json; returns the manifest.
inline DatasetManifest write_corpus(const std::vector<SequenceRecord> &records, const std::filesystem::path &dir,
                                    const std::string &name, std::vector<EmotionLabel> emotion_set) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.name = name;
  m.base_dir = dir;
  m.emotion_set = std::move(emotion_set);
  for (const auto &rec : records) {
    const auto file = rec.seq_id + ".ndjson";
    std::ofstream out(dir / file);
    if (!out)
      throw IoError("cannot write " + (dir / file).string());
    write_sequence(out, rec);
    ManifestEntry e;
    e.seq_id = rec.seq_id;
    e.path = file;
    e.label = rec.label;
    e.apex_idx = rec.apex_idx;
    if (rec.dataset != name)
      e.dataset = rec.dataset;
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

inline DatasetManifest synth_generate(const SynthSpec &spec, const std::filesystem::path &dir) {
  return write_corpus(generate_corpus(spec), dir, spec.dataset, spec.class_labels());
}

} // namespace fexpr
