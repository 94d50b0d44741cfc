// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fexpr/errors.hpp"

namespace fexpr {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Emotion labels
// ---------------------------------------------------------------------------

enum class EmotionLabel { Anger, Contempt, Disgust, Fear, Happiness, Sadness, Surprise };

inline constexpr std::array<EmotionLabel, 7> kAllEmotions = {
    EmotionLabel::Anger,     EmotionLabel::Contempt, EmotionLabel::Disgust, EmotionLabel::Fear,
    EmotionLabel::Happiness, EmotionLabel::Sadness,  EmotionLabel::Surprise};

/// The six basic emotions shared by all composite sources (contempt excluded).
inline std::vector<EmotionLabel> six_basic_emotions() {
  return {EmotionLabel::Anger,     EmotionLabel::Disgust, EmotionLabel::Fear,
          EmotionLabel::Happiness, EmotionLabel::Sadness, EmotionLabel::Surprise};
}

inline std::string_view to_string(EmotionLabel label) {
  switch (label) {
  case EmotionLabel::Anger: return "anger";
  case EmotionLabel::Contempt: return "contempt";
  case EmotionLabel::Disgust: return "disgust";
  case EmotionLabel::Fear: return "fear";
  case EmotionLabel::Happiness: return "happiness";
  case EmotionLabel::Sadness: return "sadness";
  case EmotionLabel::Surprise: return "surprise";
  }
  return "unknown";
}

inline std::optional<EmotionLabel> emotion_from_string(std::string_view name) {
  for (auto label : kAllEmotions)
    if (to_string(label) == name)
      return label;
  return std::nullopt;
}

inline EmotionLabel parse_emotion(std::string_view name) {
  if (auto label = emotion_from_string(name))
    return *label;
  throw SchemaError("unknown emotion label '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Frames and sequences
// ---------------------------------------------------------------------------

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2 &, const Point2 &) = default;
};

/// One timestamped frame of 2-D landmark coordinates in pixels.
struct LandmarkFrame {
  std::string seq_id;
  std::int64_t frame_idx = 0;
  std::int64_t t_ms = 0;
  int img_w = 1;
  int img_h = 1;
  std::vector<Point2> points;

  friend bool operator==(const LandmarkFrame &, const LandmarkFrame &) = default;
};

struct SequenceRecord {
  std::string seq_id;
  std::vector<LandmarkFrame> frames;
  EmotionLabel label = EmotionLabel::Anger;
  std::string dataset;
  /// Position (not frame_idx) of the apex frame; key-frame sampling stops there.
  std::optional<std::size_t> apex_idx;
};

inline constexpr std::size_t kKeyFrameCount = 5;

namespace detail {

inline std::int64_t require_int(const json &obj, const char *key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ParseError(line, std::string("missing field '") + key + "'");
  if (!it->is_number_integer())
    throw ParseError(line, std::string("field '") + key + "' must be an integer");
  return it->get<std::int64_t>();
}

} // namespace detail

/// Parse one line of the landmark wire format. z coordinates are accepted and dropped.
inline LandmarkFrame parse_frame_line(std::string_view text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ParseError(line, std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object())
    throw ParseError(line, "record must be a JSON object");

  LandmarkFrame frame;
  auto sid = obj.find("seq_id");
  if (sid == obj.end() || !sid->is_string())
    throw ParseError(line, "field 'seq_id' must be a string");
  frame.seq_id = sid->get<std::string>();

  frame.frame_idx = detail::require_int(obj, "frame_idx", line);
  frame.t_ms = detail::require_int(obj, "t_ms", line);
  const auto w = detail::require_int(obj, "img_w", line);
  const auto h = detail::require_int(obj, "img_h", line);
  if (frame.frame_idx < 0 || frame.t_ms < 0)
    throw SchemaError("line " + std::to_string(line) + ": frame_idx and t_ms must be non-negative");
  if (w <= 0 || h <= 0)
    throw SchemaError("line " + std::to_string(line) + ": img_w and img_h must be positive");
  frame.img_w = static_cast<int>(w);
  frame.img_h = static_cast<int>(h);

  auto pts = obj.find("points");
  if (pts == obj.end() || !pts->is_array())
    throw ParseError(line, "field 'points' must be an array");
  frame.points.reserve(pts->size());
  for (const auto &p : *pts) {
    if (!p.is_array() || p.size() < 2 || p.size() > 3)
      throw ParseError(line, "each point must be [x, y] or [x, y, z]");
    for (const auto &c : p)
      if (!c.is_number())
        throw ParseError(line, "point coordinates must be numbers");
    const double x = p[0].get<double>();
    const double y = p[1].get<double>();
    if (!std::isfinite(x) || !std::isfinite(y))
      throw SchemaError("line " + std::to_string(line) + ": non-finite coordinate");
    frame.points.push_back({x, y});
  }
  if (frame.points.empty())
    throw SchemaError("line " + std::to_string(line) + ": frame has no points");
  return frame;
}

inline json frame_to_json(const LandmarkFrame &frame) {
  json pts = json::array();
  for (const auto &p : frame.points)
    pts.push_back({p.x, p.y});
  return json{{"seq_id", frame.seq_id}, {"frame_idx", frame.frame_idx}, {"t_ms", frame.t_ms},
              {"img_w", frame.img_w},   {"img_h", frame.img_h},         {"points", std::move(pts)}};
}

inline void write_frame(std::ostream &out, const LandmarkFrame &frame) {
  out << frame_to_json(frame).dump() << '\n';
}

/// Incremental reader over an NDJSON landmark stream. Blank lines are skipped.
class FrameReader {
public:
  explicit FrameReader(std::istream &in) : in_(in) {}

  std::optional<LandmarkFrame> next() {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_;
      if (text.find_first_not_of(" \t\r") == std::string::npos)
        continue;
      return parse_frame_line(text, line_);
    }
    if (in_.bad())
      throw IoError("read failure after line " + std::to_string(line_));
    return std::nullopt;
  }

  std::size_t line() const noexcept { return line_; }

private:
  std::istream &in_;
  std::size_t line_ = 0;
};

/// Load and validate a full sequence. Frames come back sorted by frame_idx.
inline SequenceRecord load_sequence(std::istream &in, EmotionLabel label, std::string dataset = {},
                                    std::size_t min_frames = kKeyFrameCount) {
  FrameReader reader(in);
  SequenceRecord record;
  record.label = label;
  record.dataset = std::move(dataset);

  std::size_t point_count = 0;
  while (auto frame = reader.next()) {
    if (record.frames.empty()) {
      point_count = frame->points.size();
      record.seq_id = frame->seq_id;
    } else {
      if (frame->points.size() != point_count)
        throw SchemaError("line " + std::to_string(reader.line()) + ": expected " +
                          std::to_string(point_count) + " points, found " +
                          std::to_string(frame->points.size()));
      if (frame->seq_id != record.seq_id)
        throw SchemaError("line " + std::to_string(reader.line()) + ": seq_id '" + frame->seq_id +
                          "' differs from '" + record.seq_id + "'");
    }
    record.frames.push_back(std::move(*frame));
  }

  std::stable_sort(record.frames.begin(), record.frames.end(),
                   [](const auto &a, const auto &b) { return a.frame_idx < b.frame_idx; });
  for (std::size_t i = 1; i < record.frames.size(); ++i)
    if (record.frames[i].frame_idx == record.frames[i - 1].frame_idx)
      throw SchemaError("duplicate frame_idx " + std::to_string(record.frames[i].frame_idx));

  if (record.frames.size() < min_frames)
    throw InsufficientFramesError("sequence '" + record.seq_id + "' has " +
                                  std::to_string(record.frames.size()) + " frames, need at least " +
                                  std::to_string(min_frames));
  return record;
}

inline SequenceRecord load_sequence_file(const std::filesystem::path &path, EmotionLabel label,
                                         std::string dataset = {}) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  try {
    return load_sequence(in, label, std::move(dataset));
  } catch (const InsufficientFramesError &e) {
    throw InsufficientFramesError(path.string() + ": " + e.what());
  } catch (const IoError &) {
    throw;
  } catch (const Error &e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline void write_sequence(std::ostream &out, const SequenceRecord &record) {
  for (const auto &frame : record.frames)
    write_frame(out, frame);
}

// ---------------------------------------------------------------------------
// Key frames
// ---------------------------------------------------------------------------

/// Uniformly spaced key-frame positions over [0, length-1]; interior positions
/// are i*(length-1)/(count-1) rounded half up.
inline std::vector<std::size_t> select_key_frames(std::size_t length,
                                                  std::size_t count = kKeyFrameCount) {
  if (count == 0)
    throw ConfigurationError("key-frame count must be positive");
  if (length < count)
    throw InsufficientFramesError("need at least " + std::to_string(count) + " frames, have " +
                                  std::to_string(length));
  if (count == 1)
    return {0};
  std::vector<std::size_t> out(count);
  const std::size_t span = length - 1;
  const std::size_t steps = count - 1;
  for (std::size_t i = 0; i < count; ++i)
    out[i] = (2 * i * span + steps) / (2 * steps);
  return out;
}

inline std::vector<std::size_t> select_key_frames(const SequenceRecord &seq,
                                                  std::size_t count = kKeyFrameCount) {
  std::size_t length = seq.frames.size();
  if (seq.apex_idx) {
    if (*seq.apex_idx >= length)
      throw SchemaError("apex_idx " + std::to_string(*seq.apex_idx) + " outside sequence '" +
                        seq.seq_id + "'");
    length = *seq.apex_idx + 1;
  }
  return select_key_frames(length, count);
}

inline std::vector<LandmarkFrame> key_frames(const SequenceRecord &seq,
                                             std::size_t count = kKeyFrameCount) {
  std::vector<LandmarkFrame> out;
  for (auto idx : select_key_frames(seq, count))
    out.push_back(seq.frames[idx]);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string seq_id;
  std::filesystem::path path;
  EmotionLabel label = EmotionLabel::Anger;
  std::optional<std::size_t> apex_idx;
  /// Source dataset; empty means the manifest's own name.
  std::string dataset;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> entries;
  std::vector<EmotionLabel> emotion_set;
  /// Directory that relative entry paths resolve against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestEntry &entry) const {
    return entry.path.is_absolute() ? entry.path : base_dir / entry.path;
  }

  std::string dataset_of(const ManifestEntry &entry) const {
    return entry.dataset.empty() ? name : entry.dataset;
  }
};

/// Checks unique seq_ids and labels within the emotion set; optionally that files exist.
inline void validate_manifest(const DatasetManifest &m, bool check_files = true) {
  if (m.emotion_set.empty())
    throw SchemaError("manifest '" + m.name + "' has an empty emotion_set");
  std::set<std::string> ids;
  for (const auto &e : m.entries) {
    if (!ids.insert(e.seq_id).second)
      throw SchemaError("duplicate seq_id '" + e.seq_id + "' in manifest '" + m.name + "'");
    if (std::find(m.emotion_set.begin(), m.emotion_set.end(), e.label) == m.emotion_set.end())
      throw SchemaError("entry '" + e.seq_id + "' has label '" + std::string(to_string(e.label)) +
                        "' outside the emotion_set");
    if (check_files && !std::filesystem::exists(m.resolve(e)))
      throw IoError("entry '" + e.seq_id + "': file not found: " + m.resolve(e).string());
  }
}

inline json manifest_to_json(const DatasetManifest &m) {
  json entries = json::array();
  for (const auto &e : m.entries) {
    json item{{"seq_id", e.seq_id}, {"path", e.path.generic_string()},
              {"label", std::string(to_string(e.label))}};
    if (e.apex_idx)
      item["apex_idx"] = *e.apex_idx;
    if (!e.dataset.empty())
      item["dataset"] = e.dataset;
    entries.push_back(std::move(item));
  }
  json emotions = json::array();
  for (auto label : m.emotion_set)
    emotions.push_back(std::string(to_string(label)));
  return json{{"name", m.name}, {"emotion_set", std::move(emotions)}, {"entries", std::move(entries)}};
}

inline DatasetManifest manifest_from_json(const json &doc, std::filesystem::path base_dir = {}) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    m.name = doc.at("name").get<std::string>();
    for (const auto &label : doc.at("emotion_set"))
      m.emotion_set.push_back(parse_emotion(label.get<std::string>()));
    for (const auto &item : doc.at("entries")) {
      ManifestEntry e;
      e.seq_id = item.at("seq_id").get<std::string>();
      e.path = item.at("path").get<std::string>();
      e.label = parse_emotion(item.at("label").get<std::string>());
      if (auto it = item.find("apex_idx"); it != item.end())
        e.apex_idx = it->get<std::size_t>();
      if (auto it = item.find("dataset"); it != item.end())
        e.dataset = it->get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception &e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path &path, bool check_files = true) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ParseError(1, path.string() + ": " + e.what());
  }
  auto m = manifest_from_json(doc, path.parent_path());
  validate_manifest(m, check_files);
  return m;
}

inline void save_manifest(const DatasetManifest &m, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

/// Load every sequence named by the manifest.
inline std::vector<SequenceRecord> load_records(const DatasetManifest &m) {
  std::vector<SequenceRecord> out;
  out.reserve(m.entries.size());
  for (const auto &e : m.entries) {
    auto rec = load_sequence_file(m.resolve(e), e.label, m.dataset_of(e));
    rec.seq_id = e.seq_id;
    rec.apex_idx = e.apex_idx;
    out.push_back(std::move(rec));
  }
  return out;
}

} // namespace fexpr
