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

// Offline Dueling Double-DQN training over a fixed transition set.

#ifndef SEPTIC_RL_TRAIN_H_
#define SEPTIC_RL_TRAIN_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "septic_rl/mdp.h"
#include "septic_rl/qnet.h"
#include "septic_rl/replay.h"

namespace septic_rl {

struct TrainingConfig {
  long long batches = 80000;
  int batch_size = 32;
  double split_fraction = 0.8;
  std::uint64_t seed = 1;
  long long eval_every = 1000;
  long long target_sync = 1000;
  int probe_size = 256;

  NetworkShape network;
  AdamConfig adam;
  LossConfig loss;
  ReplayConfig replay;
  RewardConfig reward;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

// Patient-level split stratified by outcome. The train size is
// round(fraction * n), clamped so both sides are non-empty, and the number
// of deaths placed in train is the one that best equalizes the death
// fraction of the two sides. Members of each outcome class are drawn after
// a seeded shuffle.
SplitIndices stratified_split(std::span<const Outcome> outcomes, double fraction,
                              std::uint64_t seed);

struct TrajectorySplit {
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
};
TrajectorySplit stratified_split(std::span<const Trajectory> trajectories, double fraction,
                                 std::uint64_t seed);

// Scaled transitions laid out for batched network evaluation.
struct TransitionStore {
  Matrix states;       // N x 48, scaled
  Matrix next_states;  // N x 48, scaled
  std::vector<int> actions;
  Vector rewards;
  std::vector<bool> terminal;

  static TransitionStore build(std::span<const Trajectory> trajectories,
                               const FeatureScaler& scaler);
  std::size_t size() const { return actions.size(); }

  // Rows `rows` of the store as a contiguous batch.
  Matrix gather_states(std::span<const std::size_t> rows) const;
  Matrix gather_next_states(std::span<const std::size_t> rows) const;
};

struct MetricsRow {
  long long batch = 0;
  double mean_loss = 0.0;
  double mean_abs_td = 0.0;
  double probe_mean_max_q = 0.0;
};

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);

struct TrainResult {
  NetworkParams main;
  NetworkParams target;
  AdamState adam;
  std::vector<MetricsRow> metrics;
  long long batches_completed = 0;
  std::uint64_t stale_priority_updates = 0;
};

// Fresh network pair (target equals main) and optimizer state for `cfg`.
TrainResult initial_training_state(const TrainingConfig& cfg);

// Loads every transition into prioritized replay at maximal priority, then
// runs cfg.batches iterations of sample -> double-Q target -> loss and
// gradients -> Adam -> priority update, with a hard target sync every
// cfg.target_sync batches. Metrics are emitted every cfg.eval_every batches;
// the probe batch is the first cfg.probe_size transitions. Throws
// RuntimeFailure on a non-finite loss.
TrainResult train(const TransitionStore& store, const TrainingConfig& cfg);

}  // namespace septic_rl

#endif  // SEPTIC_RL_TRAIN_H_
