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

// Test-set summaries of physician and model actions: per-SOFA-subcohort
// 5x5 action histograms, and observed mortality by per-drug dose-bin
// difference (model bin minus clinician bin).

#ifndef SEPTIC_RL_ANALYSIS_H_
#define SEPTIC_RL_ANALYSIS_H_

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "septic_rl/mdp.h"

namespace septic_rl {

enum class Subcohort { kLow = 0, kMedium = 1, kHigh = 2 };
inline constexpr int kNumSubcohorts = 3;
std::string_view subcohort_name(Subcohort c);

// low: SOFA < medium_min; medium: medium_min <= SOFA <= medium_max;
// high: SOFA > medium_max.
struct SubcohortSpec {
  double medium_min = 5.0;
  double medium_max = 15.0;

  void validate() const;
  Subcohort classify(double sofa) const;
};

enum class ActionSource { kPhysician, kModel };
std::string_view source_name(ActionSource s);

struct ActionHistogram2D {
  Subcohort subcohort = Subcohort::kLow;
  ActionSource source = ActionSource::kPhysician;
  // counts[iv_bin][vp_bin]
  std::array<std::array<long long, kBinsPerDrug>, kBinsPerDrug> counts{};

  long long total() const;
  // Share of the grid in column vp_bin = 0; zero for an empty grid.
  double vp_zero_fraction() const;
};

struct HistogramSet {
  std::array<ActionHistogram2D, kNumSubcohorts> physician;
  std::array<ActionHistogram2D, kNumSubcohorts> model;
  std::vector<std::string> warnings;  // one per empty subcohort
};

// `model_actions[i][j]` is the flat model action for transition j of
// trajectory i. Throws ValidationError on shape mismatch.
HistogramSet action_histograms(std::span<const Trajectory> test,
                               const std::vector<std::vector<int>>& model_actions,
                               const SubcohortSpec& spec);

enum class Drug { kIv = 0, kVp = 1 };
std::string_view drug_name(Drug d);

struct DiffBin {
  long long deaths = 0;
  long long timesteps = 0;
  // deaths / timesteps, 0 when unoccupied.
  double mortality() const;
};

inline constexpr int kMaxBinDiff = kBinsPerDrug - 1;
inline constexpr int kNumDiffBins = 2 * kMaxBinDiff + 1;

struct MortalityByDiff {
  Subcohort subcohort = Subcohort::kLow;
  // bins[drug][diff + 4] for diff in -4..4.
  std::array<std::array<DiffBin, kNumDiffBins>, 2> bins{};

  const DiffBin& at(Drug d, int diff) const {
    return bins[static_cast<int>(d)][diff + kMaxBinDiff];
  }
};

// Each timestep of the subcohort carries its trajectory's final outcome.
MortalityByDiff mortality_by_difference(std::span<const Trajectory> test,
                                        const std::vector<std::vector<int>>& model_actions,
                                        Subcohort subcohort, const SubcohortSpec& spec);

// Header row "iv_bin\vp_bin,0,1,2,3,4", then one row per IV bin.
void write_histogram_csv(std::ostream& out, const ActionHistogram2D& h);
// Columns diff_bin,deaths,timesteps,mortality for diff -4..4.
void write_mortality_csv(std::ostream& out, const MortalityByDiff& m, Drug d);

}  // namespace septic_rl

#endif  // SEPTIC_RL_ANALYSIS_H_
