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

// Per-patient-timestep CSV:
//   patient_id,t,<48 feature columns>,iv_dose_raw,vp_dose_raw,outcome
// outcome is "survived" or "died" on a patient's final row and empty
// elsewhere.

#ifndef SEPTIC_RL_TRAJECTORY_CSV_H_
#define SEPTIC_RL_TRAJECTORY_CSV_H_

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "septic_rl/mdp.h"

namespace septic_rl {

std::vector<std::string> trajectory_csv_header();

// A malformed header is a file-level ValidationError. Malformed rows are
// returned with RawRecord::error set so the owning patient can be rejected.
std::vector<RawRecord> read_trajectory_csv(std::istream& in);
std::vector<RawRecord> read_trajectory_csv(const std::filesystem::path& path);

void write_trajectory_csv(std::ostream& out, std::span<const RawRecord> rows);

}  // namespace septic_rl

#endif  // SEPTIC_RL_TRAJECTORY_CSV_H_
