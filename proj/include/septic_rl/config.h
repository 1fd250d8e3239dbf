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

// Toolkit configuration as flat `section.key = value` text. Lines starting
// with '#' and blank lines are ignored. Keys absent from a file keep their
// defaults; unknown or repeated keys are errors.

#ifndef SEPTIC_RL_CONFIG_H_
#define SEPTIC_RL_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "septic_rl/analysis.h"
#include "septic_rl/cohort_synth.h"
#include "septic_rl/ope.h"
#include "septic_rl/train.h"

namespace septic_rl {

struct ToolkitConfig {
  TrainingConfig train;
  OpeConfig ope;
  SubcohortSpec analysis;
  SimParams sim;

  // Throws ValidationError naming the offending key.
  void validate() const;

  // Every key in canonical order with its current value, one per line.
  void dump(std::ostream& out) const;
  std::string dump() const;
  // FNV-1a of dump(), as 16 hex digits.
  std::string hash() const;

  static ToolkitConfig parse(std::istream& in, std::string_view source = "<config>");
  static ToolkitConfig load(const std::filesystem::path& path);
  // Sets one key from its textual value.
  void set(std::string_view key, std::string_view value);
};

}  // namespace septic_rl

#endif  // SEPTIC_RL_CONFIG_H_
