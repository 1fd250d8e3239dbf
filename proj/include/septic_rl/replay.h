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

// Proportional prioritized experience replay over a sum tree.

#ifndef SEPTIC_RL_REPLAY_H_
#define SEPTIC_RL_REPLAY_H_

#include <cstdint>
#include <vector>

#include "septic_rl/common.h"

namespace septic_rl {

// Complete binary tree over `capacity` leaves (a power of two). Node 0 is the
// root, node i has children 2i+1 and 2i+2, leaves occupy the last
// `capacity` nodes. Internal nodes are recomputed from their children on
// every write, so each equals the floating-point sum of its two children.
class SumTree {
 public:
  explicit SumTree(std::size_t min_capacity);

  std::size_t capacity() const { return capacity_; }
  double total() const { return nodes_[0]; }
  double leaf(std::size_t i) const { return nodes_[capacity_ - 1 + i]; }
  void set(std::size_t i, double value);

  // Leaf whose prefix-sum interval [prefix_{i-1}, prefix_i) contains value.
  // Values outside [0, total) are clamped into range.
  std::size_t find(double value) const;

  const std::vector<double>& nodes() const { return nodes_; }

 private:
  std::size_t capacity_;
  std::vector<double> nodes_;
};

struct ReplayConfig {
  double alpha = 0.6;
  double beta = 0.4;        // initial IS exponent
  double beta_final = 1.0;  // reached at the final training batch
  double epsilon_priority = 1e-2;
  std::size_t capacity = 0;  // 0: size to the data set

  void validate(std::size_t batch_size) const;
};

struct SlotId {
  std::uint32_t index = 0;
  std::uint32_t generation = 0;
  bool operator==(const SlotId&) const = default;
};

struct SampledItem {
  SlotId slot;
  std::size_t transition = 0;  // index into the caller's transition store
  double probability = 0.0;
  double weight = 0.0;  // normalized IS weight, batch max is 1
};

class PrioritizedReplay {
 public:
  explicit PrioritizedReplay(const ReplayConfig& cfg);

  // Leaf set to priority^alpha; overwrites the oldest slot when full.
  SlotId insert(std::size_t transition, double priority);
  // Inserts at the largest priority seen so far (1.0 when nothing was set).
  SlotId insert_max_priority(std::size_t transition);

  // Stratified proportional sampling: the total mass is cut into
  // batch_size equal segments with one uniform draw in each.
  std::vector<SampledItem> sample(std::size_t batch_size, double beta, Rng& rng) const;

  // Sets the leaf to (|td_error| + epsilon)^alpha. Updates addressed to an
  // overwritten slot are counted and ignored.
  void update_priority(SlotId slot, double td_error);

  std::size_t size() const { return size_; }
  std::size_t write_cursor() const { return cursor_; }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t stale_updates() const { return stale_updates_; }
  double max_priority() const { return max_priority_; }
  const SumTree& tree() const { return tree_; }
  const ReplayConfig& config() const { return cfg_; }

 private:
  void set_priority(std::size_t slot, double priority);

  ReplayConfig cfg_;
  std::size_t capacity_;
  SumTree tree_;
  std::vector<std::size_t> transitions_;
  std::vector<std::uint32_t> generations_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  double max_priority_ = 1.0;
  bool any_priority_ = false;
  std::uint64_t stale_updates_ = 0;
};

}  // namespace septic_rl

#endif  // SEPTIC_RL_REPLAY_H_
