// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "fexpr/fexpr.hpp"

namespace fexpr::testing {

// Straight double loop over the subset, written from the distance and angle equations.
// AU membership is decided by region co-membership, independent of the topology code.
inline std::pair<std::vector<double>, std::vector<double>> naive_frame_oracle(const std::vector<Point2> &pts,
                                                                               const LandmarkSubset &subset,
                                                                               PairMode mode) {
  using R = FaceRegion;
  const std::vector<std::vector<R>> cats = {
      {R::LeftEye, R::RightEye, R::LeftEyebrow, R::RightEyebrow},
      {R::LeftEye, R::RightEye, R::Nose},
      {R::LeftEye, R::RightEye, R::LeftEyebrow, R::RightEyebrow, R::Nose},
      {R::Nose, R::Mouth, R::LowerJaw},
      {R::LeftEye, R::RightEye, R::Nose, R::Mouth},
  };
  auto in = [](const std::vector<R> &v, R r) { return std::find(v.begin(), v.end(), r) != v.end(); };
  std::vector<double> d, a;
  const std::size_t n = subset.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (mode == PairMode::AUGrouped) {
        bool linked = false;
        for (const auto &c : cats)
          linked = linked || (in(c, subset.regions[i]) && in(c, subset.regions[j]));
        if (!linked)
          continue;
      }
      const double xi = pts[static_cast<std::size_t>(subset.indices[i])].x;
      const double yi = pts[static_cast<std::size_t>(subset.indices[i])].y;
      const double xj = pts[static_cast<std::size_t>(subset.indices[j])].x;
      const double yj = pts[static_cast<std::size_t>(subset.indices[j])].y;
      d.push_back(std::sqrt((xi - xj) * (xi - xj) + (yi - yj) * (yi - yj)));
      if (yi - yj != 0.0)
        a.push_back(std::atan((xi - xj) / (yi - yj)));
      else if (xi - xj != 0.0)
        a.push_back(std::copysign(std::numbers::pi / 2, xi - xj));
      else
        a.push_back(0.0);
    }
  return {d, a};
}


inline double oracle_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// One ConvLSTM step per position and filter, written from the gate equations.
inline CellState oracle_convlstm_step(const CellState &s, const Eigen::VectorXd &x, const ConvLstmWeights &w) {
  const auto A = x.size(), F = w.bias[0].size();
  CellState next = CellState::zeros(A, F);
  for (Eigen::Index pos = 0; pos < A; ++pos)
    for (Eigen::Index k = 0; k < F; ++k) {
      auto pre = [&](int g) {
        double v = x[pos] * w.input[g][k] + w.bias[g][k];
        for (Eigen::Index j = 0; j < F; ++j)
          v += s.h(pos, j) * w.recurrent[g](k, j);
        return v;
      };
      const double ig = oracle_sigmoid(pre(0) + w.peephole[0][k] * s.c(pos, k));
      const double fg = oracle_sigmoid(pre(1) + w.peephole[1][k] * s.c(pos, k));
      const double gg = std::tanh(pre(2));
      const double c = fg * s.c(pos, k) + ig * gg;
      const double og = oracle_sigmoid(pre(3) + w.peephole[2][k] * c);
      next.c(pos, k) = c;
      next.h(pos, k) = og * std::tanh(c);
    }
  return next;
}

} // namespace fexpr::testing
