// Copyright 2026 The septic_rl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Shared test fixtures and helpers.

#ifndef SEPTIC_RL_TESTS_FIXTURES_H_
#define SEPTIC_RL_TESTS_FIXTURES_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "septic_rl/common.h"
#include "septic_rl/mdp.h"
#include "septic_rl/qnet.h"

namespace septic_rl::testing {

struct RewardCase {
  int sofa, sofa_next;
  double lactate, lactate_next;
  double expected;
};

// Expected values evaluated at 40 significant digits with mpmath from
//   C0 * [sofa' == sofa and sofa' > 0] + C1 * (sofa' - sofa)
//   + C2 * tanh(lactate' - lactate),  C0 = -0.025, C1 = -0.125, C2 = -2.
inline constexpr std::array<RewardCase, 20> kRewardCases{{
    {0, 0, 1.0, 1.0, 0.0},
    {3, 3, 2.0, 2.0, -0.025},
    {3, 4, 2.0, 2.5, -1.049234314520019517},
    {10, 8, 4.1, 3.0, 1.850998043521259412},
    {0, 1, 0.9, 0.9, -0.125},
    {5, 5, 1.2, 7.9, -2.0249939394327340598},
    {12, 12, 9.0, 0.5, 1.9749998344024981042},
    {15, 18, 2.2, 2.21, -0.39499933335999892068},
    {19, 2, 3.3, 1.1, 4.0764862600629030408},
    {1, 1, 0.0, 0.0, -0.025},
    {7, 6, 1.5, 1.5, 0.125},
    {3, 4, 6.18, 6.25, -0.26477178063285797178},
    {3, 2, 10.77, 11.5, -1.1211306991447222144},
    {13, 17, 10.16, 11.82, -2.3604343658730526505},
    {15, 18, 3.11, 3.8, -1.5709640009978825051},
    {3, 3, 9.86, 9.56, 0.55762522490318181164},
    {21, 24, 8.25, 6.51, 1.5054532807854550634},
    {8, 9, 11.76, 14.34, -2.1021643168919066257},
    {12, 16, 7.76, 9.1, -2.2433444943793042289},
    {2, 6, 6.6, 5.33, 1.207595306310487182},
}};

inline StateVector state_with(double sofa, double lactate, double fill = 0.0) {
  StateVector s;
  for (int i = 0; i < kNumFeatures; ++i) s[i] = fill;
  s.sofa() = sofa;
  s.lactate() = lactate;
  return s;
}

// Worst per-tensor relative error ||num - ana|| / (||num|| + ||ana||) of
// the loss gradient against central differences with step h.
struct GradCheckResult {
  double worst = 0.0;
  std::string worst_tensor;
};

// The loss written out directly from a Train-mode forward.
inline double loss_value(const NetworkParams& p, const Matrix& x, std::span<const int> actions,
                         const Vector& targets, const Vector& weights, const LossConfig& cfg) {
  const Matrix q = forward(p, x, Mode::kTrain);
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double qa = q(i, actions[static_cast<std::size_t>(i)]);
    const double w = weights.size() ? weights(i) : 1.0;
    total += w * (targets(i) - qa) * (targets(i) - qa) + cfg.lambda_reg * std::max(std::abs(qa) - cfg.q_thresh, 0.0);
  }
  return total / static_cast<double>(q.rows());
}

inline GradCheckResult gradient_check(NetworkParams p, const Matrix& x, std::span<const int> actions,
                                      const Vector& targets, const Vector& weights,
                                      const LossConfig& cfg, double h = 1e-5) {
  const LossResult base = loss_and_gradients(p, x, actions, targets, weights, cfg);
  GradCheckResult out;
  auto params = p.trainable();
  auto grads = base.gradients.trainable();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& m = *params[k].second;
    const Matrix& g = *grads[k].second;
    if (m.size() == 0) continue;
    Matrix num(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double old = m.data()[i];
      m.data()[i] = old + h;
      const double lp = loss_value(p, x, actions, targets, weights, cfg);
      m.data()[i] = old - h;
      const double lm = loss_value(p, x, actions, targets, weights, cfg);
      m.data()[i] = old;
      num.data()[i] = (lp - lm) / (2.0 * h);
    }
    const double err = (num - g).norm() / std::max(1e-300, num.norm() + g.norm());
    if (err > out.worst) {
      out.worst = err;
      out.worst_tensor = params[k].first;
    }
  }
  return out;
}

// Seeded batch of 32 with targets and biases placed so that some Q-values
// exceed the regularizer threshold.
struct GradBatch {
  NetworkParams params;
  Matrix x;
  std::vector<int> actions;
  Vector targets, weights;
};

inline GradBatch gradient_batch(Head head, std::uint64_t seed, int rows = 32, int hidden = 128) {
  NetworkShape shape;
  shape.head = head;
  shape.hidden = hidden;
  Rng rng(seed);
  GradBatch b;
  b.params = NetworkParams::initialize(shape, rng);
  if (head == Head::kDueling) b.params.value_b(0, 0) = 19.5;
  else b.params.out_b.array() += 19.5;
  b.x.resize(rows, kNumFeatures);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < kNumFeatures; ++j) b.x(i, j) = rng.normal();
  b.actions.resize(static_cast<std::size_t>(rows));
  for (auto& a : b.actions) a = static_cast<int>(rng.below(kNumActions));
  b.targets.resize(rows);
  b.weights.resize(rows);
  for (int i = 0; i < rows; ++i) {
    b.targets(i) = rng.normal(15.0, 5.0);
    b.weights(i) = rng.uniform(0.2, 1.0);
  }
  return b;
}

}  // namespace septic_rl::testing

#endif  // SEPTIC_RL_TESTS_FIXTURES_H_
