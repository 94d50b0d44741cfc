// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/utsname.h>

#include <json.hpp>

#include "fexpr/errors.hpp"
#include "fexpr/feature_engine.hpp"
#include "fexpr/pair_topology.hpp"
#include "fexpr/rng.hpp"

namespace fexpr {

struct BenchOptions {
  std::size_t iterations = 2000;
  std::size_t warmup = 100;
  std::size_t frame_pool = 16; // distinct random frames cycled through
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 100)
      throw ConfigurationError("bench needs at least 100 timed iterations");
    if (frame_pool < 2)
      throw ConfigurationError("bench frame pool needs at least 2 frames");
  }
};

/// Per-frame feature-creation time for one preset and mode.
struct BenchReport {
  std::string preset;
  std::string mode;
  std::size_t pair_count = 0;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p99_us = 0.0;
  std::size_t iterations = 0;
  std::size_t warmup = 0;
  std::string host;
};

/// Aggregate multi-thread throughput; kept apart from per-frame latency.
struct ThroughputReport {
  std::string preset;
  std::string mode;
  std::size_t threads = 0;
  std::size_t frames = 0;
  double seconds = 0.0;
  double frames_per_second = 0.0;
};

inline std::string host_descriptor() {
  std::ostringstream out;
  utsname u{};
  if (uname(&u) == 0)
    out << u.sysname << ' ' << u.release << ' ' << u.machine;
  out << ", " << std::thread::hardware_concurrency() << " hw threads";
#if defined(__clang__)
  out << ", clang " << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
  out << ", gcc " << __GNUC__ << '.' << __GNUC_MINOR__;
#endif
  return out.str();
}

/// Random full-mesh frames: a jittered face-sized cloud per frame.
inline std::vector<std::vector<Point2>> random_frames(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<Point2>> frames(count, std::vector<Point2>(kMeshLandmarkCount));
  for (auto &f : frames)
    for (auto &p : f)
      p = {rng.uniform(150.0, 490.0), rng.uniform(60.0, 440.0)};
  return frames;
}

/// Percentile by nearest rank on a sorted sample.
inline double percentile_sorted(const std::vector<double> &sorted, double q) {
  if (sorted.empty())
    return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline double median_sorted(const std::vector<double> &sorted) {
  const auto n = sorted.size();
  if (n == 0)
    return 0.0;
  return n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

/// Times one frame's pairwise features plus its difference against the previous frame.
/// All buffers are allocated before the timed loop.
inline BenchReport bench_feature_creation(const PairTopology &topo, const BenchOptions &opts = {}) {
  opts.validate();
  const auto frames = random_frames(opts.frame_pool, opts.seed);
  const std::size_t p = topo.size();
  std::vector<double> prev_d(p), prev_a(p), cur_d(p), cur_a(p), row(2 * p);
  std::vector<double> samples;
  samples.reserve(opts.iterations);
  frame_features_into(frames[0], topo, prev_d, prev_a);

  double sink = 0.0;
  const std::size_t total = opts.warmup + opts.iterations;
  for (std::size_t it = 0; it < total; ++it) {
    const auto &pts = frames[(it + 1) % frames.size()];
    const auto t0 = std::chrono::steady_clock::now();
    frame_features_into(pts, topo, cur_d, cur_a);
    for (std::size_t k = 0; k < p; ++k) {
      row[k] = cur_d[k] - prev_d[k];
      row[p + k] = cur_a[k] - prev_a[k];
    }
    const auto t1 = std::chrono::steady_clock::now();
    std::swap(prev_d, cur_d);
    std::swap(prev_a, cur_a);
    sink += row[it % row.size()];
    if (it >= opts.warmup)
      samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  // Keep the work observable to the optimizer.
  if (sink == 1.2345e300)
    std::fputs("", stderr);

  BenchReport r;
  r.preset = std::string(to_string(topo.subset.preset));
  r.mode = std::string(to_string(topo.mode));
  r.pair_count = p;
  r.iterations = opts.iterations;
  r.warmup = opts.warmup;
  r.host = host_descriptor();
  double sum = 0.0;
  for (double s : samples)
    sum += s;
  r.mean_us = sum / static_cast<double>(samples.size());
  std::sort(samples.begin(), samples.end());
  r.median_us = median_sorted(samples);
  r.p99_us = percentile_sorted(samples, 0.99);
  return r;
}

inline BenchReport bench_feature_creation(Preset preset, PairMode mode, const BenchOptions &opts = {}) {
  return bench_feature_creation(builtin_topology(preset, mode), opts);
}

/// Frames per second with `threads` workers, each on private buffers.
inline ThroughputReport bench_throughput(const PairTopology &topo, std::size_t threads,
                                         std::size_t frames_per_thread, std::uint64_t seed = 0) {
  if (threads == 0)
    throw ConfigurationError("thread count must be positive");
  const auto frames = random_frames(16, seed);
  std::atomic<std::size_t> done{0};
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      const std::size_t p = topo.size();
      std::vector<double> d(p), a(p);
      for (std::size_t it = 0; it < frames_per_thread; ++it)
        frame_features_into(frames[(it + w) % frames.size()], topo, d, a);
      done += frames_per_thread;
    });
  for (auto &t : pool)
    t.join();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ThroughputReport r;
  r.preset = std::string(to_string(topo.subset.preset));
  r.mode = std::string(to_string(topo.mode));
  r.threads = threads;
  r.frames = done.load();
  r.seconds = secs;
  r.frames_per_second = secs > 0.0 ? static_cast<double>(r.frames) / secs : 0.0;
  return r;
}

/// Every preset and mode, presets in ascending size.
inline std::vector<BenchReport> bench_grid(const BenchOptions &opts = {}) {
  std::vector<BenchReport> out;
  for (auto preset : {Preset::P61, Preset::P122, Preset::P250})
    for (auto mode : {PairMode::Full, PairMode::AUGrouped})
      out.push_back(bench_feature_creation(preset, mode, opts));
  return out;
}

inline std::string format_us(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// One column per (preset, mode), one row per statistic, times in microseconds.
inline std::string bench_markdown(const std::vector<BenchReport> &reports) {
  std::ostringstream out;
  out << "| CPU (us) |";
  for (const auto &r : reports)
    out << ' ' << r.preset << ' ' << (r.mode == "full" ? "Full" : "AU") << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < reports.size(); ++i)
    out << "---:|";
  out << '\n';
  auto line = [&](const char *name, auto field) {
    out << "| " << name << " |";
    for (const auto &r : reports)
      out << ' ' << field(r) << " |";
    out << '\n';
  };
  line("pairs", [](const BenchReport &r) { return std::to_string(r.pair_count); });
  line("mean", [](const BenchReport &r) { return format_us(r.mean_us); });
  line("median", [](const BenchReport &r) { return format_us(r.median_us); });
  line("p99", [](const BenchReport &r) { return format_us(r.p99_us); });
  return out.str();
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

inline json bench_to_json(const std::vector<BenchReport> &reports) {
  json rows = json::array();
  for (const auto &r : reports)
    rows.push_back({{"preset", r.preset},
                    {"mode", r.mode},
                    {"pair_count", r.pair_count},
                    {"mean_us", round2(r.mean_us)},
                    {"median_us", round2(r.median_us)},
                    {"p99_us", round2(r.p99_us)},
                    {"iterations", r.iterations},
                    {"warmup", r.warmup}});
  return json{{"format", "fexpr-bench"},
              {"version", 1},
              {"unit", "microseconds"},
              {"host", reports.empty() ? host_descriptor() : reports.front().host},
              {"results", std::move(rows)}};
}

inline json throughput_to_json(const ThroughputReport &r) {
  return json{{"preset", r.preset},        {"mode", r.mode},       {"threads", r.threads},
              {"frames", r.frames},        {"seconds", r.seconds}, {"frames_per_second", r.frames_per_second}};
}

} // namespace fexpr
