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

// State, action and reward model for ICU treatment trajectories recorded at
// 4-hour resolution.

#ifndef SEPTIC_RL_MDP_H_
#define SEPTIC_RL_MDP_H_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace septic_rl {

inline constexpr int kNumFeatures = 48;
inline constexpr int kBinsPerDrug = 5;
inline constexpr int kNumActions = kBinsPerDrug * kBinsPerDrug;

using ActionDistribution = std::array<double, kNumActions>;

namespace features {

struct FeatureInfo {
  std::string_view column;   // CSV column name
  std::string_view display;  // clinical name
};

// Ordered schema: demographics/static, lab values, vital signs,
// intake/output events, timestep.
extern const std::array<FeatureInfo, kNumFeatures> kSchema;

// Index of a feature by CSV column or display name; throws ValidationError
// when no feature matches.
int index_of(std::string_view name);

inline constexpr int kSofa = 6;
inline constexpr int kArterialLactate = 23;
inline constexpr int kTimestep = 47;

}  // namespace features

class StateVector {
 public:
  StateVector() { values_.fill(0.0); }
  explicit StateVector(const std::array<double, kNumFeatures>& values)
      : values_(values) {}

  double& operator[](int i) { return values_[i]; }
  double operator[](int i) const { return values_[i]; }
  double sofa() const { return values_[features::kSofa]; }
  double lactate() const { return values_[features::kArterialLactate]; }
  double& sofa() { return values_[features::kSofa]; }
  double& lactate() { return values_[features::kArterialLactate]; }

  bool all_finite() const;
  std::span<const double, kNumFeatures> values() const { return values_; }
  std::span<double, kNumFeatures> values() { return values_; }

  bool operator==(const StateVector&) const = default;

 private:
  std::array<double, kNumFeatures> values_;
};

// (IV fluid bin, max vasopressor bin), each in 0..4 with 0 meaning no drug.
// Flat index is 5 * iv_bin + vp_bin.
struct Action {
  int iv_bin = 0;
  int vp_bin = 0;

  constexpr int flat_index() const { return kBinsPerDrug * iv_bin + vp_bin; }
  static Action from_flat(int flat);
  bool operator==(const Action&) const = default;
};

enum class Outcome { kSurvived, kDied };

std::string_view outcome_name(Outcome o);

struct Transition {
  StateVector state;
  Action action;
  double reward = 0.0;
  StateVector next_state;
  bool terminal = false;
  std::string patient_id;
  int t = 0;
};

struct Trajectory {
  std::string patient_id;
  std::vector<Transition> transitions;
  Outcome outcome = Outcome::kSurvived;
};

struct RewardConfig {
  double c0 = -0.025;
  double c1 = -0.125;
  double c2 = -2.0;
  double terminal_magnitude = 15.0;

  void validate() const;
};

// Quartile cut-points (Q1, Q2, Q3) of the strictly positive doses per drug.
struct ActionBinning {
  std::array<double, 3> iv_thresholds{};
  std::array<double, 3> vp_thresholds{};

  void validate() const;
  bool operator==(const ActionBinning&) const = default;
};

// Percentile with linear interpolation between order statistics
// (the "linear" / type-7 definition). `sorted` must be ascending.
double percentile_linear(std::span<const double> sorted, double q);

ActionBinning fit_binning(std::span<const double> iv_doses,
                          std::span<const double> vp_doses);

// Bin of one drug: 0 for zero dose, otherwise the first k with
// dose <= thresholds[k-1], or 4 above the last threshold.
int dose_bin(double dose, const std::array<double, 3>& thresholds);
Action discretize(double iv_dose, double vp_dose, const ActionBinning& binning);

double reward_intermediate(const StateVector& s_t, const StateVector& s_next,
                           const RewardConfig& cfg);
double reward_terminal(Outcome outcome, const RewardConfig& cfg);

// One ingested CSV row.
struct RawRecord {
  std::string patient_id;
  int t = 0;
  StateVector features;
  double iv_dose = 0.0;
  double vp_dose = 0.0;
  std::optional<Outcome> outcome;
  int line = 0;  // 1-based source line, 0 when not from a file
  std::string error;  // non-empty when the row failed to parse
};

// Rows of a single patient in file order.
struct PatientRecords {
  std::string patient_id;
  std::vector<RawRecord> rows;
};

struct Rejection {
  std::string patient_id;
  std::string reason;
};

struct GroupedRecords {
  std::vector<PatientRecords> patients;  // sorted by patient_id
  std::vector<Rejection> rejected;
};

// Groups rows by patient and validates each patient: parse errors,
// strictly increasing timestamps, finite features, finite non-negative
// doses, and an outcome exactly on the final row. Invalid patients are moved
// to `rejected` with a reason.
GroupedRecords group_and_validate(std::vector<RawRecord> rows);

// Outcome recorded on the last row; patients must already be validated.
Outcome patient_outcome(const PatientRecords& p);

struct BuildResult {
  std::vector<Trajectory> trajectories;  // ordered by patient_id
  std::vector<Rejection> rejected;
};

// Assembles one transition per row. Row i < n-1 pairs with row i+1 and
// carries reward_intermediate; the final row becomes the terminal transition
// with next_state equal to its own state and reward equal to the terminal
// reward (the duplicated final pair contributes nothing).
BuildResult build_trajectories(std::span<const PatientRecords> patients,
                               const ActionBinning& binning,
                               const RewardConfig& cfg);

// Per-feature z-scoring fit on training data.
struct FeatureScaler {
  std::array<double, kNumFeatures> mean{};
  std::array<double, kNumFeatures> stddev{};

  // Features whose training standard deviation is below 1e-12 keep scale 1.
  static FeatureScaler fit(std::span<const Trajectory> trajectories);
  static FeatureScaler identity();
  StateVector transform(const StateVector& s) const;
  bool operator==(const FeatureScaler&) const = default;
};

std::size_t count_transitions(std::span<const Trajectory> trajectories);

}  // namespace septic_rl

#endif  // SEPTIC_RL_MDP_H_
