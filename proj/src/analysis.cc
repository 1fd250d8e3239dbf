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

#include "septic_rl/analysis.h"

#include <cmath>
#include <ostream>

#include "septic_rl/common.h"

namespace septic_rl {

std::string_view subcohort_name(Subcohort c) {
  switch (c) {
    case Subcohort::kLow: return "low";
    case Subcohort::kMedium: return "medium";
    case Subcohort::kHigh: return "high";
  }
  return "?";
}

std::string_view source_name(ActionSource s) {
  return s == ActionSource::kPhysician ? "physician" : "model";
}

std::string_view drug_name(Drug d) { return d == Drug::kIv ? "iv" : "vp"; }

void SubcohortSpec::validate() const {
  if (!std::isfinite(medium_min) || !std::isfinite(medium_max) || medium_min > medium_max)
    throw ValidationError("analysis.medium_min must not exceed analysis.medium_max");
}

Subcohort SubcohortSpec::classify(double sofa) const {
  if (sofa < medium_min) return Subcohort::kLow;
  if (sofa <= medium_max) return Subcohort::kMedium;
  return Subcohort::kHigh;
}

long long ActionHistogram2D::total() const {
  long long n = 0;
  for (const auto& row : counts)
    for (long long c : row) n += c;
  return n;
}

double ActionHistogram2D::vp_zero_fraction() const {
  const long long n = total();
  if (n == 0) return 0.0;
  long long z = 0;
  for (const auto& row : counts) z += row[0];
  return static_cast<double>(z) / static_cast<double>(n);
}

double DiffBin::mortality() const {
  return timesteps == 0 ? 0.0 : static_cast<double>(deaths) / static_cast<double>(timesteps);
}

namespace {

void check_shape(std::span<const Trajectory> test,
                 const std::vector<std::vector<int>>& model_actions) {
  if (model_actions.size() != test.size())
    throw ValidationError("model actions cover " + std::to_string(model_actions.size()) +
                          " trajectories, test set has " + std::to_string(test.size()));
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (model_actions[i].size() != test[i].transitions.size())
      throw ValidationError("model action count mismatch for patient " + test[i].patient_id);
    for (int a : model_actions[i])
      if (a < 0 || a >= kNumActions)
        throw ValidationError("model action out of range for patient " + test[i].patient_id);
  }
}

}  // namespace

HistogramSet action_histograms(std::span<const Trajectory> test,
                               const std::vector<std::vector<int>>& model_actions,
                               const SubcohortSpec& spec) {
  spec.validate();
  check_shape(test, model_actions);
  HistogramSet out;
  for (int c = 0; c < kNumSubcohorts; ++c) {
    out.physician[c].subcohort = out.model[c].subcohort = static_cast<Subcohort>(c);
    out.physician[c].source = ActionSource::kPhysician;
    out.model[c].source = ActionSource::kModel;
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t j = 0; j < test[i].transitions.size(); ++j) {
      const Transition& tr = test[i].transitions[j];
      const int c = static_cast<int>(spec.classify(tr.state.sofa()));
      ++out.physician[c].counts[tr.action.iv_bin][tr.action.vp_bin];
      const Action m = Action::from_flat(model_actions[i][j]);
      ++out.model[c].counts[m.iv_bin][m.vp_bin];
    }
  }
  for (int c = 0; c < kNumSubcohorts; ++c)
    if (out.physician[c].total() == 0)
      out.warnings.push_back("subcohort " + std::string(subcohort_name(static_cast<Subcohort>(c))) +
                             " has no test timesteps");
  return out;
}

MortalityByDiff mortality_by_difference(std::span<const Trajectory> test,
                                        const std::vector<std::vector<int>>& model_actions,
                                        Subcohort subcohort, const SubcohortSpec& spec) {
  spec.validate();
  check_shape(test, model_actions);
  MortalityByDiff out;
  out.subcohort = subcohort;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool died = test[i].outcome == Outcome::kDied;
    for (std::size_t j = 0; j < test[i].transitions.size(); ++j) {
      const Transition& tr = test[i].transitions[j];
      if (spec.classify(tr.state.sofa()) != subcohort) continue;
      const Action m = Action::from_flat(model_actions[i][j]);
      const int diffs[2] = {m.iv_bin - tr.action.iv_bin, m.vp_bin - tr.action.vp_bin};
      for (int d = 0; d < 2; ++d) {
        DiffBin& b = out.bins[d][diffs[d] + kMaxBinDiff];
        ++b.timesteps;
        if (died) ++b.deaths;
      }
    }
  }
  return out;
}

void write_histogram_csv(std::ostream& out, const ActionHistogram2D& h) {
  out << "iv_bin\\vp_bin";
  for (int v = 0; v < kBinsPerDrug; ++v) out << ',' << v;
  out << '\n';
  for (int i = 0; i < kBinsPerDrug; ++i) {
    out << i;
    for (int v = 0; v < kBinsPerDrug; ++v) out << ',' << h.counts[i][v];
    out << '\n';
  }
}

void write_mortality_csv(std::ostream& out, const MortalityByDiff& m, Drug d) {
  out << "diff_bin,deaths,timesteps,mortality\n";
  for (int diff = -kMaxBinDiff; diff <= kMaxBinDiff; ++diff) {
    const DiffBin& b = m.at(d, diff);
    out << diff << ',' << b.deaths << ',' << b.timesteps << ',' << format_double(b.mortality())
        << '\n';
  }
}

}  // namespace septic_rl
