// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fexpr/errors.hpp"
#include "fexpr/feature_engine.hpp"

namespace fexpr {

inline constexpr double kStdFloor = 1e-8;

/// Per-column standardization fitted on training rows only.
struct ScalerParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev; // population, floored
  std::uint64_t topology_fingerprint = 0;
  double std_floor = kStdFloor;

  Eigen::Index feature_count() const noexcept { return mean.size(); }

  /// Hash of the fitted statistics; used to show folds never share a fit.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ topology_fingerprint;
    auto mix = [&h](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 0x100000001b3ULL;
      h ^= h >> 29;
    };
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
      mix(mean[k]);
      mix(stddev[k]);
    }
    return h;
  }
};

/// Pools every row of every tensor as one observation per column.
inline ScalerParams fit_scaler(std::span<const FeatureTensor *const> tensors) {
  if (tensors.empty())
    throw ConfigurationError("fit_scaler needs at least one tensor");
  const auto cols = tensors.front()->cols();
  const auto fp = tensors.front()->topology_fingerprint;
  Eigen::Index rows = 0;
  for (const auto *t : tensors) {
    if (t->cols() != cols)
      throw ShapeError("fit_scaler: tensors have different feature counts");
    if (t->topology_fingerprint != fp)
      throw ShapeError("fit_scaler: tensors come from different topologies");
    rows += t->rows();
  }
  if (rows == 0)
    throw ConfigurationError("fit_scaler: tensors have no rows");

  ScalerParams params;
  params.topology_fingerprint = fp;
  params.mean = Eigen::VectorXd::Zero(cols);
  for (const auto *t : tensors)
    params.mean += t->values.colwise().sum().transpose();
  params.mean /= static_cast<double>(rows);

  Eigen::VectorXd sq = Eigen::VectorXd::Zero(cols);
  for (const auto *t : tensors)
    sq += (t->values.rowwise() - params.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  params.stddev = (sq / static_cast<double>(rows)).array().sqrt().max(params.std_floor).matrix();
  return params;
}

inline ScalerParams fit_scaler(std::span<const FeatureTensor> tensors) {
  std::vector<const FeatureTensor *> ptrs;
  ptrs.reserve(tensors.size());
  for (const auto &t : tensors)
    ptrs.push_back(&t);
  return fit_scaler(std::span<const FeatureTensor *const>(ptrs));
}

inline void check_compatible(const FeatureTensor &tensor, const ScalerParams &params) {
  if (tensor.topology_fingerprint != params.topology_fingerprint)
    throw ShapeError("tensor topology " + fingerprint_hex(tensor.topology_fingerprint) +
                     " does not match scaler topology " + fingerprint_hex(params.topology_fingerprint));
  if (tensor.cols() != params.feature_count())
    throw ShapeError("tensor has " + std::to_string(tensor.cols()) + " features, scaler expects " +
                     std::to_string(params.feature_count()));
}

/// Elementwise (x - mean) / std.
inline FeatureTensor transform(const FeatureTensor &tensor, const ScalerParams &params) {
  check_compatible(tensor, params);
  FeatureTensor out;
  out.topology_fingerprint = tensor.topology_fingerprint;
  out.values = ((tensor.values.rowwise() - params.mean.transpose()).array().rowwise() /
                params.stddev.transpose().array())
                   .matrix();
  return out;
}

inline json scaler_to_json(const ScalerParams &params) {
  return json{{"format", "fexpr-scaler"},
              {"version", 1},
              {"feature_count", params.feature_count()},
              {"topology_fingerprint", fingerprint_hex(params.topology_fingerprint)},
              {"std_floor", params.std_floor},
              {"mean", std::vector<double>(params.mean.data(), params.mean.data() + params.mean.size())},
              {"std", std::vector<double>(params.stddev.data(), params.stddev.data() + params.stddev.size())}};
}

inline ScalerParams scaler_from_json(const json &doc) {
  ScalerParams params;
  try {
    if (doc.at("format").get<std::string>() != "fexpr-scaler")
      throw SchemaError("not a scaler document");
    const auto mean = doc.at("mean").get<std::vector<double>>();
    const auto sd = doc.at("std").get<std::vector<double>>();
    const auto count = doc.at("feature_count").get<std::size_t>();
    if (mean.size() != count || sd.size() != count)
      throw SchemaError("scaler vectors do not match feature_count");
    params.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(count));
    params.stddev = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(count));
    params.topology_fingerprint = parse_fingerprint(doc.at("topology_fingerprint").get<std::string>());
    params.std_floor = doc.value("std_floor", kStdFloor);
  } catch (const json::exception &e) {
    throw SchemaError(std::string("scaler: ") + e.what());
  }
  if ((params.stddev.array() <= 0.0).any())
    throw SchemaError("scaler: standard deviations must be positive");
  return params;
}

inline void save_scaler(const ScalerParams &params, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write scaler " + path.string());
  out << scaler_to_json(params).dump() << '\n';
}

inline ScalerParams load_scaler(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open scaler " + path.string());
  try {
    return scaler_from_json(json::parse(in));
  } catch (const json::parse_error &e) {
    throw ParseError(1, path.string() + ": " + e.what());
  }
}

} // namespace fexpr
