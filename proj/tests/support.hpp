// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <set>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "fexpr/fexpr.hpp"

namespace fexpr::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("fexpr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline std::vector<Point2> random_points(Rng &rng, std::size_t n = kMeshLandmarkCount, double lo = 0.0,
                                         double hi = 640.0) {
  std::vector<Point2> pts(n);
  for (auto &p : pts)
    p = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return pts;
}

inline LandmarkFrame make_frame(std::vector<Point2> pts, std::int64_t idx, const std::string &seq = "s") {
  LandmarkFrame f;
  f.seq_id = seq;
  f.frame_idx = idx;
  f.t_ms = idx * 33;
  f.img_w = 640;
  f.img_h = 480;
  f.points = std::move(pts);
  return f;
}

inline std::vector<LandmarkFrame> random_frames(Rng &rng, std::size_t count, const std::string &seq = "s") {
  std::vector<LandmarkFrame> out;
  for (std::size_t k = 0; k < count; ++k)
    out.push_back(make_frame(random_points(rng), static_cast<std::int64_t>(k), seq));
  return out;
}

/// Serialize frames as NDJSON text.
inline std::string to_ndjson(const std::vector<LandmarkFrame> &frames) {
  std::ostringstream out;
  for (const auto &f : frames)
    write_frame(out, f);
  return out.str();
}

inline std::string read_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Small randomly initialised artifact over a builtin topology, for streaming tests.
inline ModelArtifact small_artifact(Preset preset, PairMode mode, std::size_t classes = 3, std::uint64_t seed = 1,
                                    std::vector<Eigen::Index> dense = {16, 8}) {
  const auto topo = builtin_topology(preset, mode);
  ModelConfig cfg;
  cfg.feature_count = static_cast<Eigen::Index>(topo.feature_count());
  cfg.time_steps = 4;
  cfg.filters = 2;
  cfg.dense_sizes = std::move(dense);
  cfg.class_count = static_cast<Eigen::Index>(classes);
  cfg.seed = seed;
  ModelArtifact a;
  a.params = init_model(cfg);
  const auto all = six_basic_emotions();
  a.classes.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(classes));
  a.subset = topo.subset;
  a.mode = mode;
  a.topology_fingerprint = topo.fingerprint();
  return a;
}

/// Identity scaler (mean 0, std 1) for a topology.
inline ScalerParams identity_scaler(const PairTopology &topo) {
  ScalerParams s;
  s.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.feature_count()));
  s.stddev = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(topo.feature_count()));
  s.topology_fingerprint = topo.fingerprint();
  return s;
}

/// Run a shell command, capturing stdout; returns the exit status.
inline int run_command(const std::string &cmd, std::string *out = nullptr) {
  FILE *pipe = ::popen(cmd.c_str(), "r");
  if (!pipe)
    return -1;
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0)
    text.append(buf, n);
  const int status = ::pclose(pipe);
  if (out)
    *out = std::move(text);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace fexpr::testing
