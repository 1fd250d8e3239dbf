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

#include "septic_rl/pipeline.h"

#include "septic_rl/common.h"
#include "septic_rl/train.h"

namespace septic_rl {

PreparedData prepare_dataset(std::vector<RawRecord> rows, double split_fraction,
                             std::uint64_t seed, const RewardConfig& reward) {
  GroupedRecords grouped = group_and_validate(std::move(rows));
  if (grouped.patients.size() < 2)
    throw ValidationError("need at least two valid patients, found " +
                          std::to_string(grouped.patients.size()));
  std::vector<Outcome> outcomes;
  for (const auto& p : grouped.patients) outcomes.push_back(patient_outcome(p));
  const SplitIndices split = stratified_split(outcomes, split_fraction, seed);

  std::vector<PatientRecords> train, test;
  std::vector<double> iv, vp;
  for (auto i : split.train) {
    for (const auto& r : grouped.patients[i].rows) {
      iv.push_back(r.iv_dose);
      vp.push_back(r.vp_dose);
    }
    train.push_back(std::move(grouped.patients[i]));
  }
  for (auto i : split.test) test.push_back(std::move(grouped.patients[i]));

  PreparedData out;
  out.binning = fit_binning(iv, vp);
  BuildResult tr = build_trajectories(train, out.binning, reward);
  BuildResult te = build_trajectories(test, out.binning, reward);
  out.train = std::move(tr.trajectories);
  out.test = std::move(te.trajectories);
  out.rejected = std::move(grouped.rejected);
  out.rejected.insert(out.rejected.end(), tr.rejected.begin(), tr.rejected.end());
  out.rejected.insert(out.rejected.end(), te.rejected.begin(), te.rejected.end());
  if (out.train.empty()) throw ValidationError("no valid training trajectories");
  out.scaler = FeatureScaler::fit(out.train);
  return out;
}

IdSplit split_by_ids(std::vector<PatientRecords> patients, const std::set<std::string>& test_ids) {
  IdSplit out;
  for (auto& p : patients) (test_ids.count(p.patient_id) ? out.test : out.train).push_back(std::move(p));
  return out;
}

std::vector<std::string> patient_ids(const std::vector<Trajectory>& trajectories) {
  std::vector<std::string> ids;
  ids.reserve(trajectories.size());
  for (const auto& t : trajectories) ids.push_back(t.patient_id);
  return ids;
}

int GreedyPolicy::act(const StateVector& raw_state) const {
  return greedy_action(*params_, scaler_->transform(raw_state)).flat_index();
}

std::vector<std::vector<int>> GreedyPolicy::act_all(
    const std::vector<Trajectory>& trajectories) const {
  std::vector<std::vector<int>> out(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    std::vector<StateVector> states;
    for (const auto& tr : trajectories[i].transitions) states.push_back(scaler_->transform(tr.state));
    if (!states.empty()) out[i] = greedy_actions(*params_, states_to_matrix(states));
  }
  return out;
}

}  // namespace septic_rl
