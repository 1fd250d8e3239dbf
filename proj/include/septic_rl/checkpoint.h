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

// Training checkpoints as JSON. Doubles are written in shortest round-trip
// form, so save -> load reproduces every tensor bit for bit. The file holds
// no timestamps; identical runs give identical bytes.

#ifndef SEPTIC_RL_CHECKPOINT_H_
#define SEPTIC_RL_CHECKPOINT_H_

#include <filesystem>
#include <string>
#include <vector>

#include "septic_rl/config.h"
#include "septic_rl/mdp.h"
#include "septic_rl/qnet.h"

namespace septic_rl {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  ToolkitConfig config;
  FeatureScaler scaler;
  ActionBinning binning;
  NetworkParams main;
  NetworkParams target;
  AdamState adam;
  std::vector<std::string> test_patient_ids;
  std::string data_checksum;
  long long batches_completed = 0;

  bool operator==(const Checkpoint& other) const;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
// Throws ValidationError on malformed input, a schema version mismatch, a
// config hash that does not match the stored config, or non-finite tensors.
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace septic_rl

#endif  // SEPTIC_RL_CHECKPOINT_H_
