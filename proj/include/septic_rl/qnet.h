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

// Fully connected Q-network: two hidden layers, each affine -> batch norm ->
// leaky ReLU f(z) = max(z, 0.5 z). The dueling head splits the second hidden
// layer into equal value and advantage halves and combines them as
// Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a'). The linear head maps the second
// hidden layer straight to one output per action and is shared by the
// behavior-cloning and fitted-Q-evaluation models.
//
// Batches are row-major in meaning: one sample per matrix row.

#ifndef SEPTIC_RL_QNET_H_
#define SEPTIC_RL_QNET_H_

#include <Eigen/Dense>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "septic_rl/common.h"
#include "septic_rl/mdp.h"

namespace septic_rl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Head { kDueling, kLinear };
enum class Mode { kTrain, kInfer };

struct NetworkShape {
  int inputs = kNumFeatures;
  int hidden = 128;
  int outputs = kNumActions;
  Head head = Head::kDueling;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;

  bool operator==(const NetworkShape&) const = default;
};

struct NetworkParams {
  NetworkShape shape;

  // Trainable. The affine layers feeding batch norm carry no bias: the
  // batch-norm shift plays that role.
  Matrix w1;         // hidden x inputs
  Matrix bn1_scale;  // 1 x hidden
  Matrix bn1_shift;
  Matrix w2;         // hidden x hidden
  Matrix bn2_scale;
  Matrix bn2_shift;
  Matrix value_w;  // 1 x hidden/2           (dueling)
  Matrix value_b;  // 1 x 1
  Matrix adv_w;    // outputs x hidden/2     (dueling)
  Matrix adv_b;    // 1 x outputs
  Matrix out_w;    // outputs x hidden       (linear)
  Matrix out_b;    // 1 x outputs

  // Batch-norm running statistics, updated only by apply_batch_statistics.
  Matrix bn1_mean, bn1_var, bn2_mean, bn2_var;

  static NetworkParams zeros(const NetworkShape& shape);
  // He-style normal initialization scaled for the 0.5 leaky slope:
  // std = sqrt(2 / ((1 + 0.25) * fan_in)).
  static NetworkParams initialize(const NetworkShape& shape, Rng& rng);

  // Trainable tensors in a fixed order, with stable names.
  std::vector<std::pair<std::string, Matrix*>> trainable();
  std::vector<std::pair<std::string, const Matrix*>> trainable() const;
  // Running statistics, same convention.
  std::vector<std::pair<std::string, Matrix*>> statistics();
  std::vector<std::pair<std::string, const Matrix*>> statistics() const;

  bool all_finite() const;
  std::size_t parameter_count() const;
  bool operator==(const NetworkParams& other) const;
};

struct ForwardCache {
  Mode mode = Mode::kInfer;
  Matrix input;
  Matrix xhat1, y1, h1;
  Matrix xhat2, y2, h2;
  RowVector mean1, var1, inv_std1;
  RowVector mean2, var2, inv_std2;
  Vector value;     // dueling only
  Matrix advantage; // dueling only, before mean subtraction
  Matrix output;
};

double leaky_relu(double z);

// Input must be finite; Train mode needs at least two rows.
Matrix forward(const NetworkParams& params, const Matrix& input, Mode mode,
               ForwardCache* cache = nullptr);

// Gradient of sum_ij d_output(i,j) * output(i,j) with respect to every
// trainable tensor, for a Train-mode cache. Non-trainable tensors in the
// result are left empty.
NetworkParams backward(const NetworkParams& params, const ForwardCache& cache,
                       const Matrix& d_output);

// Folds the batch statistics of a Train-mode forward into the running
// statistics: running = m * running + (1 - m) * batch, using the unbiased
// batch variance.
void apply_batch_statistics(NetworkParams& params, const ForwardCache& cache);
// Replaces the running statistics with the full-batch statistics of
// `inputs` under the current weights, so Infer mode on `inputs` equals a
// Train-mode forward of the whole set.
void recalibrate_batch_statistics(NetworkParams& params, const Matrix& inputs);

Matrix states_to_matrix(std::span<const StateVector> states);

// --- Adam -----------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  long long step = 0;

  static AdamState for_params(const NetworkParams& params);
};

void adam_step(NetworkParams& params, const NetworkParams& gradients, AdamState& state,
               const AdamConfig& cfg);

// --- Double DQN ---------------------------------------------------------------

struct LossConfig {
  double q_thresh = 20.0;
  double lambda_reg = 0.25;
  double gamma = 0.99;
  double target_clip = 20.0;

  void validate() const;
};

// Index of the largest entry, ties to the lowest index.
int argmax_row(const Matrix& q, Eigen::Index row);

// r + gamma * clip(Q(s', argmax_a' Q(s', a'; main); target)) for non-terminal
// rows and r for terminal rows. Both networks run in Infer mode.
Vector double_q_target(const NetworkParams& main, const NetworkParams& target,
                       const Matrix& next_states, const Vector& rewards,
                       const std::vector<bool>& terminal, const LossConfig& cfg);

struct LossResult {
  double loss = 0.0;
  Vector td_errors;  // target - Q(s, a)
  Vector q_taken;
  NetworkParams gradients;
  ForwardCache cache;
};

// Loss = (1/B) sum_i w_i (y_i - Q_i)^2 + lambda (1/B) sum_i max(|Q_i| - q_thresh, 0)
// with Q_i = Q(s_i, a_i; main) from a Train-mode forward; targets are
// constants. Weights default to 1 when empty.
LossResult loss_and_gradients(const NetworkParams& main, const Matrix& states,
                              std::span<const int> actions, const Vector& targets,
                              const Vector& weights, const LossConfig& cfg);

// Hard copy, including running statistics.
void sync_target(const NetworkParams& main, NetworkParams& target);

// Infer-mode greedy action on an already-scaled state.
Action greedy_action(const NetworkParams& params, const StateVector& scaled_state);
std::vector<int> greedy_actions(const NetworkParams& params, const Matrix& scaled_states);

}  // namespace septic_rl

#endif  // SEPTIC_RL_QNET_H_
