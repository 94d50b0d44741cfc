// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fexpr/neural_net.hpp"

namespace fexpr {

struct GradCheckSample {
  Eigen::MatrixXd input; // T x A, already scaled
  int label = 0;
};

struct TensorGradError {
  std::string name;
  double max_relative_error = 0.0;
  Eigen::Index worst_index = 0;
};

struct GradCheckReport {
  std::vector<TensorGradError> tensors;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  double step = 0.0;
  bool passed = true;
  std::string failing_tensor; // first tensor over tolerance, if any
};

/// Mean cross-entropy over the samples, the quantity the check differentiates.
inline double mean_sample_loss(const ModelParams &params, std::span<const GradCheckSample> samples) {
  std::vector<const Eigen::MatrixXd *> inputs;
  std::vector<int> labels;
  for (const auto &s : samples) {
    inputs.push_back(&s.input);
    labels.push_back(s.label);
  }
  const auto cache = forward_batch(params, inputs, false);
  return batch_loss(cache, labels);
}

/// Compare analytic gradients with central differences for every scalar parameter.
///
/// Error per entry is |analytic - numeric| / max(1, |analytic|). `tamper` may edit
/// the analytic gradients before comparison (mutation testing).
inline GradCheckReport finite_difference_check(const ModelParams &params, std::span<const GradCheckSample> samples,
                                               double tol = 1e-4, double step = 1e-5,
                                               const std::function<void(ModelParams &)> &tamper = {}) {
  std::vector<const Eigen::MatrixXd *> inputs;
  std::vector<int> labels;
  for (const auto &s : samples) {
    inputs.push_back(&s.input);
    labels.push_back(s.label);
  }
  ModelParams analytic = zeros_like(params);
  backward_batch(params, forward_batch(params, inputs), labels, analytic);
  if (tamper)
    tamper(analytic);

  GradCheckReport report;
  report.tolerance = tol;
  report.step = step;
  ModelParams probe = params;
  for_each_tensor(
      [&](const std::string &name, auto &p, const auto &g) {
        TensorGradError err{name, 0.0, 0};
        for (Eigen::Index k = 0; k < p.size(); ++k) {
          const double saved = p.data()[k];
          p.data()[k] = saved + step;
          const double up = mean_sample_loss(probe, samples);
          p.data()[k] = saved - step;
          const double down = mean_sample_loss(probe, samples);
          p.data()[k] = saved;
          const double numeric = (up - down) / (2.0 * step);
          const double a = g.data()[k];
          const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
          if (rel > err.max_relative_error) {
            err.max_relative_error = rel;
            err.worst_index = k;
          }
        }
        report.max_relative_error = std::max(report.max_relative_error, err.max_relative_error);
        if (err.max_relative_error > tol && report.passed) {
          report.passed = false;
          report.failing_tensor = name;
        }
        report.tensors.push_back(std::move(err));
      },
      probe, analytic);
  return report;
}

} // namespace fexpr
