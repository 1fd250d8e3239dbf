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

#include "septic_rl/replay.h"

#include <algorithm>
#include <cmath>

namespace septic_rl {

namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

SumTree::SumTree(std::size_t min_capacity)
    : capacity_(next_pow2(std::max<std::size_t>(min_capacity, 1))),
      nodes_(2 * capacity_ - 1, 0.0) {}

void SumTree::set(std::size_t i, double value) {
  if (i >= capacity_) throw std::out_of_range("SumTree leaf out of range");
  if (!(value >= 0.0) || !std::isfinite(value))
    throw ValidationError("sum tree values must be finite and non-negative");
  std::size_t node = capacity_ - 1 + i;
  nodes_[node] = value;
  while (node > 0) {
    node = (node - 1) / 2;
    nodes_[node] = nodes_[2 * node + 1] + nodes_[2 * node + 2];
  }
}

std::size_t SumTree::find(double value) const {
  if (total() <= 0.0) throw ValidationError("sampling from an empty sum tree");
  value = std::clamp(value, 0.0, total());
  std::size_t node = 0;
  while (node < capacity_ - 1) {
    const std::size_t left = 2 * node + 1;
    const std::size_t right = left + 1;
    if (nodes_[right] <= 0.0 || (value < nodes_[left] && nodes_[left] > 0.0)) {
      node = left;
    } else {
      value -= nodes_[left];
      node = right;
    }
  }
  return node - (capacity_ - 1);
}

void ReplayConfig::validate(std::size_t batch_size) const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("replay.alpha must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("replay.beta must lie in [0,1]");
  if (!(beta_final >= 0.0 && beta_final <= 1.0))
    throw ValidationError("replay.beta_final must lie in [0,1]");
  if (!(epsilon_priority > 0.0) || !std::isfinite(epsilon_priority))
    throw ValidationError("replay.epsilon_priority must be positive");
  if (capacity != 0 && capacity < batch_size)
    throw ValidationError("replay.capacity must be at least the batch size");
}

PrioritizedReplay::PrioritizedReplay(const ReplayConfig& cfg)
    : cfg_(cfg),
      capacity_(cfg.capacity),
      tree_(cfg.capacity),
      transitions_(cfg.capacity, 0),
      generations_(cfg.capacity, 0) {
  if (capacity_ == 0) throw ValidationError("replay capacity must be positive");
}

void PrioritizedReplay::set_priority(std::size_t slot, double priority) {
  tree_.set(slot, std::pow(priority, cfg_.alpha));
  if (!any_priority_ || priority > max_priority_) max_priority_ = priority;
  any_priority_ = true;
}

SlotId PrioritizedReplay::insert(std::size_t transition, double priority) {
  if (!std::isfinite(priority) || !(priority > 0.0))
    throw ValidationError("replay priority must be finite and positive");
  const std::size_t slot = cursor_;
  transitions_[slot] = transition;
  ++generations_[slot];
  set_priority(slot, priority);
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  return SlotId{static_cast<std::uint32_t>(slot), generations_[slot]};
}

SlotId PrioritizedReplay::insert_max_priority(std::size_t transition) {
  return insert(transition, any_priority_ ? max_priority_ : 1.0);
}

std::vector<SampledItem> PrioritizedReplay::sample(std::size_t batch_size, double beta,
                                                   Rng& rng) const {
  if (size_ == 0) throw ValidationError("cannot sample from an empty replay buffer");
  if (batch_size == 0 || size_ < batch_size)
    throw ValidationError("replay holds " + std::to_string(size_) +
                          " transitions, fewer than batch size " + std::to_string(batch_size));
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch_size);
  std::vector<SampledItem> batch(batch_size);
  double max_w = 0.0;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double lo = segment * static_cast<double>(i);
    const std::size_t leaf = tree_.find(rng.uniform(lo, lo + segment));
    SampledItem& item = batch[i];
    item.slot = SlotId{static_cast<std::uint32_t>(leaf), generations_[leaf]};
    item.transition = transitions_[leaf];
    item.probability = tree_.leaf(leaf) / total;
    item.weight = std::pow(static_cast<double>(size_) * item.probability, -beta);
    max_w = std::max(max_w, item.weight);
  }
  for (auto& item : batch) item.weight /= max_w;
  return batch;
}

void PrioritizedReplay::update_priority(SlotId slot, double td_error) {
  if (slot.index >= capacity_ || slot.generation != generations_[slot.index] ||
      slot.generation == 0) {
    ++stale_updates_;
    return;
  }
  if (!std::isfinite(td_error)) throw RuntimeFailure("non-finite TD error in priority update");
  set_priority(slot.index, std::abs(td_error) + cfg_.epsilon_priority);
}

}  // namespace septic_rl
