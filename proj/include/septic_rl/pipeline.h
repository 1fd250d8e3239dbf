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

// Raw rows -> validated, split, discretized and scaled trajectories.

#ifndef SEPTIC_RL_PIPELINE_H_
#define SEPTIC_RL_PIPELINE_H_

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "septic_rl/mdp.h"
#include "septic_rl/qnet.h"

namespace septic_rl {

struct PreparedData {
  ActionBinning binning;
  FeatureScaler scaler;
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  std::vector<Rejection> rejected;
};

// Groups and validates rows, splits patients by outcome, then fits binning
// and scaler on the training patients only.
PreparedData prepare_dataset(std::vector<RawRecord> rows, double split_fraction,
                             std::uint64_t seed, const RewardConfig& reward);

// Splits already-validated patients by an explicit test id set.
struct IdSplit {
  std::vector<PatientRecords> train;
  std::vector<PatientRecords> test;
};
IdSplit split_by_ids(std::vector<PatientRecords> patients, const std::set<std::string>& test_ids);

std::vector<std::string> patient_ids(const std::vector<Trajectory>& trajectories);

// Greedy policy over unscaled states.
class GreedyPolicy {
 public:
  GreedyPolicy(const NetworkParams& params, const FeatureScaler& scaler)
      : params_(&params), scaler_(&scaler) {}

  int act(const StateVector& raw_state) const;
  // One action per transition of each trajectory, in order.
  std::vector<std::vector<int>> act_all(const std::vector<Trajectory>& trajectories) const;

 private:
  const NetworkParams* params_;
  const FeatureScaler* scaler_;
};

}  // namespace septic_rl

#endif  // SEPTIC_RL_PIPELINE_H_
