// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fexpr/errors.hpp"
#include "fexpr/rng.hpp"

namespace fexpr {

/// Architecture and optimizer settings.
struct ModelConfig {
  Eigen::Index feature_count = 0; // A: spatial positions of the 1-D map
  Eigen::Index time_steps = 4;    // T = key frames - 1
  Eigen::Index filters = 8;       // F
  Eigen::Index kernel_size = 1;
  std::vector<Eigen::Index> dense_sizes{2048, 1024};
  Eigen::Index class_count = 0;
  std::uint64_t seed = 0;

  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;

  void validate() const {
    if (feature_count <= 0 || time_steps <= 0 || filters <= 0 || class_count <= 0)
      throw ConfigurationError("model sizes must be positive");
    if (kernel_size != 1)
      throw ConfigurationError("only kernel size 1 is supported");
    for (auto d : dense_sizes)
      if (d <= 0)
        throw ConfigurationError("dense layer sizes must be positive");
    if (batch_size == 0)
      throw ConfigurationError("batch size must be positive");
    if (!(learning_rate > 0.0) || !(epsilon > 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 ||
        beta2 >= 1.0)
      throw ConfigurationError("invalid optimizer settings");
  }

  Eigen::Index flat_size() const noexcept { return feature_count * filters; }
};

enum Gate : int { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };

inline constexpr std::array<const char *, 4> kGateNames = {"input", "forget", "cell", "output"};

/// ConvLSTM1D weights for kernel size 1 and a single input channel.
///
/// Gate g pre-activation at one position p (a row of F values):
///   x[p] * input[g]^T + h[p,:] * recurrent[g]^T + peephole[g] o c[p,:] + bias[g]
/// The cell gate has no peephole; peephole[2] belongs to the output gate.
struct ConvLstmWeights {
  std::array<Eigen::VectorXd, 4> input;     // F
  std::array<Eigen::MatrixXd, 4> recurrent; // F x F (out x in)
  std::array<Eigen::VectorXd, 3> peephole;  // input, forget, output; F each
  std::array<Eigen::VectorXd, 4> bias;      // F
};

struct DenseLayer {
  Eigen::MatrixXd weight; // out x in
  Eigen::VectorXd bias;
};

/// Every trainable tensor. Gradients and optimizer moments reuse this type.
struct ModelParams {
  ModelConfig config;
  ConvLstmWeights cell;
  std::vector<DenseLayer> layers; // hidden layers then the softmax output layer
};

/// Visit matching tensors of several same-shaped parameter sets, in a fixed order.
template <class Fn, class First, class... Rest>
void for_each_tensor(Fn &&fn, First &first, Rest &...rest) {
  static constexpr std::array<const char *, 3> peep = {"input", "forget", "output"};
  for (int g = 0; g < 4; ++g)
    fn(std::string("convlstm.input_kernel.") + kGateNames[g], first.cell.input[g], rest.cell.input[g]...);
  for (int g = 0; g < 4; ++g)
    fn(std::string("convlstm.recurrent_kernel.") + kGateNames[g], first.cell.recurrent[g],
       rest.cell.recurrent[g]...);
  for (int g = 0; g < 3; ++g)
    fn(std::string("convlstm.peephole.") + peep[g], first.cell.peephole[g], rest.cell.peephole[g]...);
  for (int g = 0; g < 4; ++g)
    fn(std::string("convlstm.bias.") + kGateNames[g], first.cell.bias[g], rest.cell.bias[g]...);
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const std::string name = "dense" + std::to_string(l);
    fn(name + ".weight", first.layers[l].weight, rest.layers[l].weight...);
    fn(name + ".bias", first.layers[l].bias, rest.layers[l].bias...);
  }
}

inline ModelParams zeros_like(const ModelParams &params) {
  ModelParams out = params;
  for_each_tensor([](const std::string &, auto &t) { t.setZero(); }, out);
  return out;
}

inline std::size_t parameter_count(const ModelParams &params) {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string &, const auto &t) { n += static_cast<std::size_t>(t.size()); },
                  params);
  return n;
}

/// Parameter count implied by a config, without allocating.
inline std::size_t parameter_count(const ModelConfig &c) {
  const auto f = static_cast<std::size_t>(c.filters);
  std::size_t n = 4 * f + 4 * f * f + 3 * f + 4 * f;
  auto in = static_cast<std::size_t>(c.flat_size());
  for (auto d : c.dense_sizes) {
    n += static_cast<std::size_t>(d) * (in + 1);
    in = static_cast<std::size_t>(d);
  }
  return n + static_cast<std::size_t>(c.class_count) * (in + 1);
}

namespace detail {

inline void glorot_fill(Eigen::Ref<Eigen::MatrixXd> m, double fan_in, double fan_out, Rng &rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = rng.uniform(-limit, limit);
}

} // namespace detail

/// Glorot-uniform kernels, zero biases except the forget gate (1.0).
inline ModelParams init_model(const ModelConfig &config) {
  config.validate();
  Rng rng(config.seed);
  ModelParams p;
  p.config = config;
  const auto f = config.filters;
  const auto fd = static_cast<double>(f);
  for (int g = 0; g < 4; ++g) {
    p.cell.input[g].resize(f);
    detail::glorot_fill(p.cell.input[g], 1.0, fd, rng);
  }
  for (int g = 0; g < 4; ++g) {
    p.cell.recurrent[g].resize(f, f);
    detail::glorot_fill(p.cell.recurrent[g], fd, fd, rng);
  }
  for (int g = 0; g < 3; ++g) {
    p.cell.peephole[g].resize(f);
    detail::glorot_fill(p.cell.peephole[g], 1.0, fd, rng);
  }
  for (int g = 0; g < 4; ++g)
    p.cell.bias[g] = Eigen::VectorXd::Constant(f, g == kForgetGate ? 1.0 : 0.0);

  Eigen::Index in = config.flat_size();
  auto add_layer = [&](Eigen::Index out) {
    DenseLayer layer;
    layer.weight.resize(out, in);
    detail::glorot_fill(layer.weight, static_cast<double>(in), static_cast<double>(out), rng);
    layer.bias = Eigen::VectorXd::Zero(out);
    p.layers.push_back(std::move(layer));
    in = out;
  };
  for (auto d : config.dense_sizes)
    add_layer(d);
  add_layer(config.class_count);
  return p;
}

// ---------------------------------------------------------------------------
// ConvLSTM cell
// ---------------------------------------------------------------------------

/// Hidden and cell state, one row per spatial position (A x F).
struct CellState {
  Eigen::MatrixXd h;
  Eigen::MatrixXd c;

  static CellState zeros(Eigen::Index positions, Eigen::Index filters) {
    return {Eigen::MatrixXd::Zero(positions, filters), Eigen::MatrixXd::Zero(positions, filters)};
  }
};

/// Intermediates of one step, kept for backpropagation through time.
struct StepCache {
  Eigen::VectorXd x;
  Eigen::MatrixXd h_prev, c_prev;
  Eigen::MatrixXd i, f, g, o, c, tanh_c;
};

namespace detail {

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd &a) {
  return (1.0 / (1.0 + (-a.array()).exp())).matrix();
}

inline void require_finite(const Eigen::MatrixXd &m, const char *what) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite value in ConvLSTM ") + what);
}

inline Eigen::MatrixXd gate_preactivation(const ConvLstmWeights &w, int gate, const Eigen::VectorXd &x,
                                          const Eigen::MatrixXd &h) {
  Eigen::MatrixXd a = x * w.input[gate].transpose();
  a.noalias() += h * w.recurrent[gate].transpose();
  a.rowwise() += w.bias[gate].transpose();
  return a;
}

inline Eigen::MatrixXd hadamard_rows(const Eigen::MatrixXd &m, const Eigen::VectorXd &v) {
  return (m.array().rowwise() * v.transpose().array()).matrix();
}

inline CellState convlstm_step_impl(const ConvLstmWeights &w, const CellState &state,
                                    const Eigen::VectorXd &x, StepCache *cache) {
  Eigen::MatrixXd i = sigmoid(gate_preactivation(w, kInputGate, x, state.h) + hadamard_rows(state.c, w.peephole[0]));
  require_finite(i, "input gate");
  Eigen::MatrixXd f = sigmoid(gate_preactivation(w, kForgetGate, x, state.h) + hadamard_rows(state.c, w.peephole[1]));
  require_finite(f, "forget gate");
  Eigen::MatrixXd g = gate_preactivation(w, kCellGate, x, state.h).array().tanh().matrix();
  require_finite(g, "cell candidate");

  CellState next;
  next.c = (f.array() * state.c.array() + i.array() * g.array()).matrix();
  require_finite(next.c, "cell state");
  Eigen::MatrixXd o = sigmoid(gate_preactivation(w, kOutputGate, x, state.h) + hadamard_rows(next.c, w.peephole[2]));
  require_finite(o, "output gate");
  Eigen::MatrixXd tanh_c = next.c.array().tanh().matrix();
  next.h = (o.array() * tanh_c.array()).matrix();
  require_finite(next.h, "hidden state");

  if (cache) {
    cache->x = x;
    cache->h_prev = state.h;
    cache->c_prev = state.c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c = next.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

} // namespace detail

/// One ConvLSTM1D step with kernel size 1: per-position channel mixing plus peepholes.
inline CellState convlstm_step(const CellState &state, const Eigen::VectorXd &x_t,
                               const ConvLstmWeights &weights) {
  if (state.h.rows() != x_t.size() || state.c.rows() != x_t.size() ||
      state.h.cols() != weights.bias[0].size() || state.c.cols() != weights.bias[0].size())
    throw ShapeError("convlstm_step: state, input and weights disagree on shape");
  return detail::convlstm_step_impl(weights, state, x_t, nullptr);
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Cached forward pass over a batch. Row b of every matrix belongs to sample b.
struct BatchCache {
  std::vector<std::vector<StepCache>> steps; // [sample][t]
  Eigen::MatrixXd flat;                      // B x (A*F)
  std::vector<Eigen::MatrixXd> pre;          // dense pre-activations, B x units
  std::vector<Eigen::MatrixXd> act;          // hidden activations (rectified)
  Eigen::MatrixXd probs;                     // B x e

  Eigen::Index batch() const noexcept { return probs.rows(); }
};

namespace detail {

inline void softmax_rows(Eigen::MatrixXd &z) {
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    const double m = z.row(b).maxCoeff();
    z.row(b) = (z.row(b).array() - m).exp().matrix();
    z.row(b) /= z.row(b).sum();
  }
}

} // namespace detail

/// Forward pass for inputs of shape (T x A). With keep_cache false only probs are filled.
inline BatchCache forward_batch(const ModelParams &params, std::span<const Eigen::MatrixXd *const> inputs,
                                bool keep_cache = true) {
  const auto &cfg = params.config;
  const auto batch = static_cast<Eigen::Index>(inputs.size());
  const auto a = cfg.feature_count;
  const auto f = cfg.filters;
  BatchCache cache;
  cache.flat.resize(batch, cfg.flat_size());
  if (keep_cache)
    cache.steps.resize(inputs.size());

  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto &x = *inputs[static_cast<std::size_t>(b)];
    if (x.rows() != cfg.time_steps || x.cols() != a)
      throw ShapeError("model expects input " + std::to_string(cfg.time_steps) + " x " + std::to_string(a) +
                       ", got " + std::to_string(x.rows()) + " x " + std::to_string(x.cols()));
    CellState state = CellState::zeros(a, f);
    if (keep_cache)
      cache.steps[static_cast<std::size_t>(b)].resize(static_cast<std::size_t>(cfg.time_steps));
    for (Eigen::Index t = 0; t < cfg.time_steps; ++t) {
      const Eigen::VectorXd xt = x.row(t).transpose();
      StepCache *sc = keep_cache ? &cache.steps[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] : nullptr;
      state = detail::convlstm_step_impl(params.cell, state, xt, sc);
    }
    // Flatten (A, F) row-major.
    for (Eigen::Index p = 0; p < a; ++p)
      for (Eigen::Index k = 0; k < f; ++k)
        cache.flat(b, p * f + k) = state.h(p, k);
  }

  const std::size_t n_layers = params.layers.size();
  Eigen::MatrixXd current;
  const Eigen::MatrixXd *input = &cache.flat;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto &layer = params.layers[l];
    Eigen::MatrixXd z(batch, layer.weight.rows());
    z.noalias() = *input * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (l + 1 == n_layers) {
      detail::softmax_rows(z);
      cache.probs = std::move(z);
      break;
    }
    Eigen::MatrixXd h = z.cwiseMax(0.0);
    if (keep_cache) {
      cache.pre.push_back(std::move(z));
      cache.act.push_back(std::move(h));
      input = &cache.act.back();
    } else {
      current = std::move(h);
      input = &current;
    }
  }
  if (!cache.probs.allFinite())
    throw NumericError("non-finite class probabilities");
  return cache;
}

inline constexpr double kProbabilityClamp = 1e-12;

/// Categorical cross-entropy with the probability clamped to >= 1e-12.
inline double loss(const Eigen::VectorXd &probs, Eigen::Index label) {
  return -std::log(std::max(probs[label], kProbabilityClamp));
}

inline double batch_loss(const BatchCache &cache, std::span<const int> labels) {
  double sum = 0.0;
  for (Eigen::Index b = 0; b < cache.batch(); ++b)
    sum += -std::log(std::max(cache.probs(b, labels[static_cast<std::size_t>(b)]), kProbabilityClamp));
  return sum / static_cast<double>(cache.batch());
}

/// Gradients of the mean batch loss, written into `grads` (same shapes as params).
inline void backward_batch(const ModelParams &params, const BatchCache &cache, std::span<const int> labels,
                           ModelParams &grads) {
  const auto &cfg = params.config;
  const Eigen::Index batch = cache.batch();
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    throw ShapeError("backward: one label per sample required");
  if (cache.steps.size() != static_cast<std::size_t>(batch))
    throw ShapeError("backward: forward cache was not kept");

  // Softmax + cross-entropy: dL/dz = (p - onehot) / B.
  Eigen::MatrixXd dz = cache.probs;
  for (Eigen::Index b = 0; b < batch; ++b)
    dz(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
  dz /= static_cast<double>(batch);

  Eigen::MatrixXd dflat;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const Eigen::MatrixXd &in = l == 0 ? cache.flat : cache.act[l - 1];
    grads.layers[l].weight.noalias() = dz.transpose() * in;
    grads.layers[l].bias = dz.colwise().sum().transpose();
    Eigen::MatrixXd din(batch, in.cols());
    din.noalias() = dz * params.layers[l].weight;
    if (l == 0) {
      dflat = std::move(din);
    } else {
      dz = (din.array() * (cache.pre[l - 1].array() > 0.0).cast<double>()).matrix();
    }
  }

  auto &gc = grads.cell;
  for (int g = 0; g < 4; ++g) {
    gc.input[g].setZero();
    gc.recurrent[g].setZero();
    gc.bias[g].setZero();
  }
  for (int g = 0; g < 3; ++g)
    gc.peephole[g].setZero();

  const auto &w = params.cell;
  const auto a = cfg.feature_count;
  const auto f = cfg.filters;
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::MatrixXd dh(a, f);
    for (Eigen::Index p = 0; p < a; ++p)
      for (Eigen::Index k = 0; k < f; ++k)
        dh(p, k) = dflat(b, p * f + k);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(a, f);

    const auto &steps = cache.steps[static_cast<std::size_t>(b)];
    for (std::size_t t = steps.size(); t-- > 0;) {
      const auto &s = steps[t];
      const auto o = s.o.array();
      const auto i = s.i.array();
      const auto fg = s.f.array();
      const auto g = s.g.array();
      const auto tc = s.tanh_c.array();

      Eigen::MatrixXd dao = (dh.array() * tc * o * (1.0 - o)).matrix();
      Eigen::MatrixXd dc = dc_next + (dh.array() * o * (1.0 - tc.square())).matrix() +
                           detail::hadamard_rows(dao, w.peephole[2]);
      Eigen::MatrixXd dai = (dc.array() * g * i * (1.0 - i)).matrix();
      Eigen::MatrixXd dag = (dc.array() * i * (1.0 - g.square())).matrix();
      Eigen::MatrixXd daf = (dc.array() * s.c_prev.array() * fg * (1.0 - fg)).matrix();

      dc_next = (dc.array() * fg).matrix() + detail::hadamard_rows(dai, w.peephole[0]) +
                detail::hadamard_rows(daf, w.peephole[1]);

      const std::array<const Eigen::MatrixXd *, 4> da = {&dai, &daf, &dag, &dao};
      Eigen::MatrixXd dh_prev = Eigen::MatrixXd::Zero(a, f);
      for (int gate = 0; gate < 4; ++gate) {
        gc.input[gate].noalias() += da[gate]->transpose() * s.x;
        gc.recurrent[gate].noalias() += da[gate]->transpose() * s.h_prev;
        gc.bias[gate] += da[gate]->colwise().sum().transpose();
        dh_prev.noalias() += *da[gate] * w.recurrent[gate];
      }
      gc.peephole[0] += (dai.array() * s.c_prev.array()).colwise().sum().matrix().transpose();
      gc.peephole[1] += (daf.array() * s.c_prev.array()).colwise().sum().matrix().transpose();
      gc.peephole[2] += (dao.array() * s.c.array()).colwise().sum().matrix().transpose();
      dh = std::move(dh_prev);
    }
  }
}

/// Single-sample forward result.
struct ForwardResult {
  Eigen::VectorXd probs;
  BatchCache cache;
};

inline ForwardResult forward(const ModelParams &params, const Eigen::MatrixXd &x) {
  const Eigen::MatrixXd *ptr = &x;
  ForwardResult r;
  r.cache = forward_batch(params, std::span<const Eigen::MatrixXd *const>(&ptr, 1));
  r.probs = r.cache.probs.row(0).transpose();
  return r;
}

/// Gradients of loss(probs, label) for a single cached sample.
inline ModelParams backward(const ModelParams &params, const BatchCache &cache, int label) {
  ModelParams grads = zeros_like(params);
  const int labels[1] = {label};
  backward_batch(params, cache, labels, grads);
  return grads;
}

/// Class probabilities without retaining a cache.
inline Eigen::VectorXd predict_proba(const ModelParams &params, const Eigen::MatrixXd &x) {
  const Eigen::MatrixXd *ptr = &x;
  auto cache = forward_batch(params, std::span<const Eigen::MatrixXd *const>(&ptr, 1), false);
  return cache.probs.row(0).transpose();
}

/// Lowest index among the maxima.
inline Eigen::Index argmax_lowest(const Eigen::VectorXd &v) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k)
    if (v[k] > v[best])
      best = k;
  return best;
}

} // namespace fexpr
