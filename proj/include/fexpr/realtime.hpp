// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fexpr/errors.hpp"
#include "fexpr/feature_engine.hpp"
#include "fexpr/landmark_io.hpp"
#include "fexpr/model_io.hpp"
#include "fexpr/preprocessing.hpp"
#include "fexpr/training.hpp"

namespace fexpr {

// ---------------------------------------------------------------------------
// Phase detection over the mean-distance trace
// ---------------------------------------------------------------------------

enum class Phase { Neutral, Onset, Apex, Offset };

inline std::string_view to_string(Phase p) {
  switch (p) {
  case Phase::Neutral: return "neutral";
  case Phase::Onset: return "onset";
  case Phase::Apex: return "apex";
  case Phase::Offset: return "offset";
  }
  return "neutral";
}

/// The phase that follows `p` on the Neutral, Onset, Apex, Offset cycle.
inline Phase next_phase(Phase p) {
  switch (p) {
  case Phase::Neutral: return Phase::Onset;
  case Phase::Onset: return Phase::Apex;
  case Phase::Apex: return Phase::Offset;
  case Phase::Offset: return Phase::Neutral;
  }
  return Phase::Neutral;
}

struct PhaseConfig {
  double t_active = 0.15;      // pixels; |smoothed diff| at or above this counts as activity
  std::size_t window = 3;      // samples without a new peak (Onset) or of quiet (Offset)
  double drop_fraction = 0.25; // Apex ends once the trace falls this far below its peak
  std::size_t smoothing = 3;   // centered moving-average span (odd); 1 uses the raw trace
  std::size_t trace_capacity = 256;

  void validate() const {
    if (!(t_active > 0.0) || !std::isfinite(t_active))
      throw ConfigurationError("phase threshold must be positive");
    if (window == 0)
      throw ConfigurationError("phase window must be at least 1");
    if (!(drop_fraction > 0.0) || drop_fraction >= 1.0)
      throw ConfigurationError("drop fraction must be in (0, 1)");
    if (smoothing == 0 || smoothing % 2 == 0)
      throw ConfigurationError("phase smoothing span must be odd");
    if (trace_capacity < smoothing)
      throw ConfigurationError("trace capacity must hold the smoothing span");
  }

  /// Samples by which the smoothed trace lags the raw one.
  std::size_t lag() const noexcept { return smoothing / 2; }
};

struct PhaseState {
  Phase phase = Phase::Neutral;
  std::deque<double> trace; // most recent samples, bounded by trace_capacity
  std::size_t samples = 0;  // total samples seen
  std::deque<double> smoothed; // smoothed samples, bounded like trace; back() is sample samples - 1 - lag
  int polarity = 0;         // sign of the trace when the expression started
  double peak = 0.0;        // largest polarity-adjusted smoothed value since onset
  std::size_t peak_sample = 0;
  std::size_t since_peak = 0;
  std::size_t quiet = 0;
  std::optional<std::size_t> apex_start; // first sample of the near-peak region
};

namespace detail {

/// Earliest sample, walking back from the peak, that stays within drop_fraction of it.
inline std::size_t apex_region_start(const PhaseState &state, const PhaseConfig &cfg) {
  const double floor = state.peak * (1.0 - cfg.drop_fraction);
  const std::size_t newest = state.samples - 1 - cfg.lag();
  const std::size_t oldest = newest + 1 - state.smoothed.size();
  std::size_t k = state.peak_sample;
  while (k > oldest) {
    const double v = state.smoothed[k - 1 - oldest] * state.polarity;
    if (v < floor)
      break;
    --k;
  }
  return k;
}

} // namespace detail

/// One update of the phase state machine; moves at most one step along the cycle.
///
/// The machine runs on a centered moving average of the trace, so it reacts to sample
/// n - lag when sample n arrives. Onset starts when |smoothed| reaches t_active; its sign
/// fixes the polarity. Apex is confirmed once no new peak appears for `window` samples
/// and is dated back to the start of the region within drop_fraction of the peak. Offset starts when the trace drops by
/// drop_fraction of the peak or below t_active. Neutral returns after `window` quiet samples.
inline PhaseState detect_phase(PhaseState state, double diff, const PhaseConfig &cfg = {}) {
  if (!std::isfinite(diff))
    diff = 0.0;
  ++state.samples;
  state.trace.push_back(diff);
  while (state.trace.size() > cfg.trace_capacity)
    state.trace.pop_front();
  const std::size_t lag = cfg.lag();
  if (state.samples <= lag)
    return state;
  const std::size_t n = state.samples - 1 - lag;
  // Raw samples n - lag .. n + lag, clipped at the start of the stream.
  const std::size_t span = std::min(cfg.smoothing, lag + 1 + n);
  double sum = 0.0;
  for (std::size_t k = 0; k < span; ++k)
    sum += state.trace[state.trace.size() - 1 - k];
  const double value = sum / static_cast<double>(span);
  state.smoothed.push_back(value);
  while (state.smoothed.size() > cfg.trace_capacity)
    state.smoothed.pop_front();

  const double mag = std::abs(value);
  const double s = state.polarity >= 0 ? value : -value;
  switch (state.phase) {
  case Phase::Neutral:
    if (mag >= cfg.t_active) {
      state.phase = Phase::Onset;
      state.polarity = value >= 0.0 ? 1 : -1;
      state.peak = mag;
      state.peak_sample = n;
      state.since_peak = 0;
      state.quiet = 0;
      state.apex_start.reset();
    }
    break;
  case Phase::Onset:
    if (s > state.peak) {
      state.peak = s;
      state.peak_sample = n;
      state.since_peak = 0;
    } else if (++state.since_peak >= cfg.window) {
      state.phase = Phase::Apex;
      state.apex_start = detail::apex_region_start(state, cfg);
    }
    break;
  case Phase::Apex:
    if (s > state.peak) {
      state.peak = s;
      state.peak_sample = n;
      state.apex_start = detail::apex_region_start(state, cfg);
    } else if (s <= state.peak * (1.0 - cfg.drop_fraction) || s < cfg.t_active) {
      state.phase = Phase::Offset;
      state.quiet = mag < cfg.t_active ? 1 : 0;
    }
    break;
  case Phase::Offset:
    state.quiet = mag < cfg.t_active ? state.quiet + 1 : 0;
    if (state.quiet >= cfg.window) {
      state.phase = Phase::Neutral;
      state.polarity = 0;
      state.peak = 0.0;
      state.quiet = 0;
    }
    break;
  }
  return state;
}

/// Convenience wrapper holding a state and its configuration.
class PhaseDetector {
public:
  explicit PhaseDetector(PhaseConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  Phase update(double diff) {
    state_ = detect_phase(std::move(state_), diff, cfg_);
    return state_.phase;
  }

  void reset() { state_ = PhaseState{}; }
  const PhaseState &state() const noexcept { return state_; }
  const PhaseConfig &config() const noexcept { return cfg_; }

private:
  PhaseConfig cfg_;
  PhaseState state_;
};

// ---------------------------------------------------------------------------
// Streaming engine
// ---------------------------------------------------------------------------

struct StreamPrediction {
  EmotionLabel label = EmotionLabel::Anger;
  int class_index = 0;
  std::vector<double> probabilities; // in model class order
  Phase phase = Phase::Neutral;
  double mean_distance_diff = 0.0;
  std::int64_t frame_idx = 0; // frame that completed the window
  double latency_ms = 0.0;
};

inline json prediction_to_json(const StreamPrediction &p, std::span<const EmotionLabel> classes) {
  json probs = json::object();
  for (std::size_t k = 0; k < p.probabilities.size() && k < classes.size(); ++k)
    probs[std::string(to_string(classes[k]))] = p.probabilities[k];
  return json{{"frame_idx", p.frame_idx},
              {"label", std::string(to_string(p.label))},
              {"probabilities", std::move(probs)},
              {"phase", std::string(to_string(p.phase))},
              {"mean_distance_diff", p.mean_distance_diff},
              {"latency_ms", p.latency_ms}};
}

inline constexpr std::int64_t kDefaultCadenceMs = 400;

/// Sliding window of kKeyFrameCount frames; predicts on every push once full, then drops the oldest.
class StreamEngine {
public:
  StreamEngine(ModelArtifact model, ScalerParams scaler, PhaseConfig phase = {},
               std::int64_t cadence_ms = kDefaultCadenceMs)
      : model_(std::move(model)), scaler_(std::move(scaler)), topo_(model_.topology()), detector_(phase),
        cadence_ms_(cadence_ms) {
    const auto fp = topo_.fingerprint();
    if (fp != model_.topology_fingerprint)
      throw ShapeError("model topology fingerprint does not match its subset and mode");
    if (scaler_.topology_fingerprint != fp)
      throw ShapeError("scaler topology " + fingerprint_hex(scaler_.topology_fingerprint) +
                       " does not match model topology " + fingerprint_hex(fp));
    const auto features = static_cast<Eigen::Index>(topo_.feature_count());
    if (scaler_.feature_count() != features || model_.params.config.feature_count != features)
      throw ShapeError("model, scaler and topology disagree on the feature count");
    if (model_.params.config.time_steps != static_cast<Eigen::Index>(kKeyFrameCount - 1))
      throw ShapeError("stream model must take " + std::to_string(kKeyFrameCount - 1) + " time steps");
    if (cadence_ms_ < 0)
      throw ConfigurationError("cadence must not be negative");
    window_.values.resize(static_cast<Eigen::Index>(kKeyFrameCount - 1), features);
    window_.topology_fingerprint = fp;
  }

  std::optional<StreamPrediction> push(const LandmarkFrame &frame) {
    const auto start = std::chrono::steady_clock::now();
    check_frame_covers(frame.points.size(), topo_);
    if (!buffer_.empty() && buffer_.front().points.size() != frame.points.size())
      throw SchemaError("frame " + std::to_string(frame.frame_idx) + " has " + std::to_string(frame.points.size()) +
                        " points, stream started with " + std::to_string(buffer_.front().points.size()));
    buffer_.push_back(frame);
    features_.push_back(frame_features(frame, topo_));
    if (buffer_.size() < kKeyFrameCount)
      return std::nullopt;

    const auto p = static_cast<Eigen::Index>(topo_.size());
    for (std::size_t t = 1; t < features_.size(); ++t) {
      const auto &prev = features_[t - 1];
      const auto &cur = features_[t];
      const auto row = static_cast<Eigen::Index>(t - 1);
      for (Eigen::Index k = 0; k < p; ++k) {
        const auto i = static_cast<std::size_t>(k);
        window_.values(row, k) = cur.distances[i] - prev.distances[i];
        window_.values(row, p + k) = cur.angles[i] - prev.angles[i];
      }
    }
    const auto pred = predict(model_.params, scaler_, window_);

    StreamPrediction out;
    out.class_index = pred.label;
    out.label = model_.classes[static_cast<std::size_t>(pred.label)];
    out.probabilities.assign(pred.probabilities.data(), pred.probabilities.data() + pred.probabilities.size());
    out.mean_distance_diff = mean_distance_diff(features_.front(), features_.back());
    out.phase = detector_.update(out.mean_distance_diff);
    out.frame_idx = frame.frame_idx;

    buffer_.pop_front();
    features_.pop_front();
    out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  void reset() {
    buffer_.clear();
    features_.clear();
    detector_.reset();
  }

  std::size_t buffered() const noexcept { return buffer_.size(); }
  std::int64_t cadence_ms() const noexcept { return cadence_ms_; }
  const PairTopology &topology() const noexcept { return topo_; }
  const ModelArtifact &model() const noexcept { return model_; }
  const PhaseState &phase_state() const noexcept { return detector_.state(); }

private:
  ModelArtifact model_;
  ScalerParams scaler_;
  PairTopology topo_;
  PhaseDetector detector_;
  std::int64_t cadence_ms_;
  std::deque<LandmarkFrame> buffer_;
  std::deque<FrameFeatures> features_;
  FeatureTensor window_;
};

enum class ReplayRate { RealTime, MaxSpeed };

inline ReplayRate parse_replay_rate(std::string_view name) {
  if (name == "realtime")
    return ReplayRate::RealTime;
  if (name == "max")
    return ReplayRate::MaxSpeed;
  throw ConfigurationError("unknown rate '" + std::string(name) + "' (expected realtime or max)");
}

/// Feed an NDJSON stream through the engine. RealTime paces pushes at the engine cadence.
/// `sink`, when given, sees each prediction as soon as it is produced.
inline std::vector<StreamPrediction> replay(std::istream &in, StreamEngine &engine, ReplayRate rate,
                                            const std::function<void(const StreamPrediction &)> &sink = {}) {
  std::vector<StreamPrediction> out;
  FrameReader reader(in);
  const auto start = std::chrono::steady_clock::now();
  std::size_t count = 0;
  while (true) {
    std::optional<LandmarkFrame> frame;
    try {
      frame = reader.next();
    } catch (const ParseError &e) {
      std::string what = e.what();
      const auto prefix = "line " + std::to_string(e.line()) + ": ";
      if (what.starts_with(prefix))
        what.erase(0, prefix.size());
      throw ParseError(e.line(), "stream frame " + std::to_string(count) + ": " + what);
    }
    if (!frame)
      break;
    if (rate == ReplayRate::RealTime && count > 0)
      std::this_thread::sleep_until(start + std::chrono::milliseconds(engine.cadence_ms() *
                                                                       static_cast<std::int64_t>(count)));
    std::optional<StreamPrediction> pred;
    try {
      pred = engine.push(*frame);
    } catch (const ParseError &) {
      throw;
    } catch (const Error &e) {
      throw SchemaError("stream frame_idx " + std::to_string(frame->frame_idx) + ": " + e.what());
    }
    ++count;
    if (pred) {
      if (sink)
        sink(*pred);
      out.push_back(std::move(*pred));
    }
  }
  return out;
}

} // namespace fexpr
