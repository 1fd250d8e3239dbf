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

// Off-policy evaluation: behavior cloning of the logged policy, fitted Q
// evaluation of a target policy, and the doubly robust estimator
//   V^{H+1-t} = V(s_t) + rho_t (r_t + gamma V^{H-t} - Q(s_t, a_t)),  V^0 = 0.

#ifndef SEPTIC_RL_OPE_H_
#define SEPTIC_RL_OPE_H_

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "septic_rl/mdp.h"
#include "septic_rl/qnet.h"

namespace septic_rl {

using ActionValues = std::array<double, kNumActions>;

// Scores a batch of unscaled states. Policies return distributions over the
// 25 actions; value models return Q(s, .).
using PolicyFn = std::function<std::vector<ActionDistribution>(std::span<const StateVector>)>;
using QFn = std::function<std::vector<ActionValues>(std::span<const StateVector>)>;

struct OpeConfig {
  double behavior_floor = 1e-3;
  long long bc_steps = 6000;
  int bc_batch_size = 128;
  double bc_learning_rate = 1e-3;
  // Fraction of training trajectories held out to pick the BC checkpoint
  // with the lowest validation NLL, checked every bc_eval_every steps.
  double bc_validation_fraction = 0.2;
  long long bc_eval_every = 100;
  int fqe_iterations = 50;
  long long fqe_steps_per_iteration = 400;
  int fqe_batch_size = 128;
  double fqe_learning_rate = 1e-3;
  std::uint64_t seed = 11;
  NetworkShape network{kNumFeatures, 128, kNumActions, Head::kLinear, 0.99, 1e-5};

  void validate() const;
};

// Softmax classifier over the 25 actions with the Q-network trunk and a
// linear head. Probabilities are floored and renormalized.
class BehaviorPolicyModel {
 public:
  BehaviorPolicyModel(NetworkParams net, FeatureScaler scaler, double floor);

  std::vector<ActionDistribution> probabilities(std::span<const StateVector> raw_states) const;
  PolicyFn as_policy() const;
  double floor() const { return floor_; }
  // Smallest probability the model can emit.
  double min_probability() const { return floor_ / (1.0 + kNumActions * floor_); }
  const NetworkParams& network() const { return net_; }

 private:
  NetworkParams net_;
  FeatureScaler scaler_;
  double floor_;
};

// Floors each entry at `floor` and renormalizes.
ActionDistribution apply_floor(const ActionDistribution& p, double floor);

BehaviorPolicyModel fit_behavior_policy(std::span<const Trajectory> train,
                                        const FeatureScaler& scaler, const OpeConfig& cfg);

// Q-hat for a fixed evaluation policy; V-hat(s) = sum_a pi_e(a|s) Q-hat(s, a).
class ValueModel {
 public:
  ValueModel(NetworkParams net, FeatureScaler scaler) : net_(std::move(net)), scaler_(scaler) {}

  std::vector<ActionValues> q_values(std::span<const StateVector> raw_states) const;
  QFn as_q() const;
  const NetworkParams& network() const { return net_; }

 private:
  NetworkParams net_;
  FeatureScaler scaler_;
};

// Fitted Q evaluation: cfg.fqe_iterations rounds, each regressing a fresh
// copy (warm-started from the previous round) onto
// r + gamma * sum_a' pi_e(a'|s') Q_k(s', a') for a fixed number of Adam steps.
// Throws RuntimeFailure on a non-finite regression loss.
ValueModel fit_value_model(std::span<const Trajectory> train, const FeatureScaler& scaler,
                           const PolicyFn& pi_e, double gamma, const OpeConfig& cfg);

// Deterministic greedy policy of a Q-network over unscaled states.
PolicyFn greedy_policy(const NetworkParams& net, const FeatureScaler& scaler);
// (1 - epsilon) * base + epsilon * uniform.
PolicyFn epsilon_greedy(PolicyFn base, double epsilon);

struct DREstimate {
  std::vector<double> per_trajectory;
  double mean = 0.0;
  double standard_error = 0.0;
  // Fraction of trajectories with at least one zero importance ratio.
  double zero_is_fraction = 0.0;
};

// Throws ValidationError when a behavior probability of a logged action is
// non-finite, not positive, or below `min_behavior_probability`.
DREstimate doubly_robust_value(std::span<const Trajectory> test, const PolicyFn& pi_e,
                               const PolicyFn& pi_b, const QFn& q_hat, double gamma,
                               double min_behavior_probability = 0.0);

// Mean over trajectories of sum_t gamma^t r_t.
double behavior_value(std::span<const Trajectory> test, double gamma);

}  // namespace septic_rl

#endif  // SEPTIC_RL_OPE_H_
