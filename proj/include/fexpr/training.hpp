// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fexpr/errors.hpp"
#include "fexpr/feature_engine.hpp"
#include "fexpr/neural_net.hpp"
#include "fexpr/preprocessing.hpp"
#include "fexpr/rng.hpp"

namespace fexpr {

/// Bytes held during training by parameters, gradients and both Adam moments.
inline std::size_t training_memory_bytes(const ModelConfig &c) { return 4 * sizeof(double) * parameter_count(c); }

struct LabeledTensor {
  FeatureTensor tensor;
  int label = 0;
};

/// Adam with bias correction folded into the step size.
class AdamOptimizer {
public:
  explicit AdamOptimizer(const ModelParams &params)
      : lr_(params.config.learning_rate), beta1_(params.config.beta1), beta2_(params.config.beta2),
        eps_(params.config.epsilon), m_(zeros_like(params)), v_(zeros_like(params)) {}

  void step(ModelParams &params, const ModelParams &grads) {
    ++t_;
    const double t = static_cast<double>(t_);
    const double lr_t = lr_ * std::sqrt(1.0 - std::pow(beta2_, t)) / (1.0 - std::pow(beta1_, t));
    const double b1 = beta1_, b2 = beta2_, eps = eps_;
    for_each_tensor(
        [&](const std::string &, auto &p, const auto &g, auto &m, auto &v) {
          double *pp = p.data();
          const double *gp = g.data();
          double *mp = m.data();
          double *vp = v.data();
          const auto n = p.size();
          for (Eigen::Index k = 0; k < n; ++k) {
            mp[k] = b1 * mp[k] + (1.0 - b1) * gp[k];
            vp[k] = b2 * vp[k] + (1.0 - b2) * gp[k] * gp[k];
            pp[k] -= lr_t * mp[k] / (std::sqrt(vp[k]) + eps);
          }
        },
        params, grads, m_, v_);
  }

  std::uint64_t steps() const noexcept { return t_; }
  const ModelParams &first_moment() const noexcept { return m_; }
  const ModelParams &second_moment() const noexcept { return v_; }

private:
  double lr_, beta1_, beta2_, eps_;
  ModelParams m_, v_;
  std::uint64_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct TrainHistory {
  std::vector<EpochMetrics> epochs;

  std::optional<double> final_val_accuracy() const {
    return epochs.empty() ? std::nullopt : epochs.back().val_accuracy;
  }

  std::optional<double> best_val_accuracy() const {
    std::optional<double> best;
    for (const auto &e : epochs)
      if (e.val_accuracy && (!best || *e.val_accuracy > *best))
        best = e.val_accuracy;
    return best;
  }
};

struct TrainResult {
  ModelParams params;
  ScalerParams scaler;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochMetrics &)>;

struct Prediction {
  int label = 0;
  Eigen::VectorXd probabilities;
};

namespace detail {

struct PreparedSet {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<int> labels;
};

inline PreparedSet scale_set(std::span<const LabeledTensor> set, const ScalerParams &scaler) {
  PreparedSet out;
  out.inputs.reserve(set.size());
  for (const auto &s : set) {
    out.inputs.push_back(transform(s.tensor, scaler).values);
    out.labels.push_back(s.label);
  }
  return out;
}

/// Mean loss and accuracy without caching intermediates.
inline std::pair<double, double> score_set(const ModelParams &params, const PreparedSet &set,
                                           std::size_t chunk) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.inputs.size(); start += chunk) {
    const std::size_t end = std::min(set.inputs.size(), start + chunk);
    std::vector<const Eigen::MatrixXd *> ptrs;
    for (std::size_t k = start; k < end; ++k)
      ptrs.push_back(&set.inputs[k]);
    const auto cache = forward_batch(params, ptrs, false);
    for (std::size_t k = start; k < end; ++k) {
      const Eigen::VectorXd p = cache.probs.row(static_cast<Eigen::Index>(k - start)).transpose();
      loss_sum += loss(p, set.labels[k]);
      correct += argmax_lowest(p) == set.labels[k];
    }
  }
  const auto n = static_cast<double>(set.inputs.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

} // namespace detail

/// Fits the scaler on the training set, then runs mini-batch Adam.
///
/// feature_count / time_steps of zero in the config are inferred from the data.
inline TrainResult train(std::span<const LabeledTensor> train_set, std::span<const LabeledTensor> val_set,
                         ModelConfig config, const EpochCallback &on_epoch = {}) {
  if (train_set.empty())
    throw ConfigurationError("training set is empty");
  const auto &first = train_set.front().tensor;
  if (config.feature_count == 0)
    config.feature_count = first.cols();
  if (config.time_steps == 0)
    config.time_steps = first.rows();
  int max_label = -1;
  for (auto set : {train_set, val_set})
    for (const auto &s : set) {
      if (s.tensor.rows() != config.time_steps || s.tensor.cols() != config.feature_count)
        throw ShapeError("sample tensor shape does not match the model configuration");
      if (s.tensor.topology_fingerprint != first.topology_fingerprint)
        throw ShapeError("samples come from different pair topologies");
      if (s.label < 0)
        throw ConfigurationError("negative class label");
      max_label = std::max(max_label, s.label);
    }
  if (config.class_count <= max_label)
    throw ConfigurationError("class_count " + std::to_string(config.class_count) + " too small for label " +
                             std::to_string(max_label));

  std::vector<const FeatureTensor *> train_tensors;
  for (const auto &s : train_set)
    train_tensors.push_back(&s.tensor);

  TrainResult result;
  result.scaler = fit_scaler(std::span<const FeatureTensor *const>(train_tensors));
  result.params = init_model(config);
  if (config.epochs == 0)
    return result;

  const auto train_data = detail::scale_set(train_set, result.scaler);
  const auto val_data = detail::scale_set(val_set, result.scaler);

  ModelParams grads = zeros_like(result.params);
  AdamOptimizer adam(result.params);
  Rng shuffle_rng(mix_seed(config.seed, 0x5eed));
  std::vector<std::size_t> order(train_data.inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Eigen::MatrixXd *> inputs;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        inputs.push_back(&train_data.inputs[order[k]]);
        labels.push_back(train_data.labels[order[k]]);
      }
      const auto cache = forward_batch(result.params, inputs);
      loss_sum += batch_loss(cache, labels) * static_cast<double>(end - start);
      for (Eigen::Index b = 0; b < cache.batch(); ++b) {
        const Eigen::VectorXd row = cache.probs.row(b).transpose();
        correct += argmax_lowest(row) == labels[static_cast<std::size_t>(b)];
      }
      backward_batch(result.params, cache, labels, grads);
      adam.step(result.params, grads);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val_data.inputs.empty()) {
      const auto [vl, va] = detail::score_set(result.params, val_data, config.batch_size);
      m.val_loss = vl;
      m.val_accuracy = va;
    }
    result.history.epochs.push_back(m);
    if (on_epoch)
      on_epoch(m);
  }
  return result;
}

/// Scale, run the network, pick the most probable class (lowest index on ties).
inline Prediction predict(const ModelParams &params, const ScalerParams &scaler, const FeatureTensor &raw) {
  const auto scaled = transform(raw, scaler);
  Prediction p;
  p.probabilities = predict_proba(params, scaled.values);
  p.label = static_cast<int>(argmax_lowest(p.probabilities));
  return p;
}

} // namespace fexpr
