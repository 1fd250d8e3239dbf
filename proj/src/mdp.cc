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

#include "septic_rl/mdp.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "septic_rl/common.h"

namespace septic_rl {

namespace features {

const std::array<FeatureInfo, kNumFeatures> kSchema = {{
    // Demographics / static
    {"shock_index", "Shock Index"},
    {"elixhauser", "Elixhauser"},
    {"sirs", "SIRS"},
    {"gender", "Gender"},
    {"re_admission", "Re-admission"},
    {"gcs", "GCS"},
    {"sofa", "SOFA"},
    {"age", "Age"},
    // Lab values
    {"albumin", "Albumin"},
    {"arterial_ph", "Arterial pH"},
    {"calcium", "Calcium"},
    {"glucose", "Glucose"},
    {"hemoglobin", "Hemoglobin"},
    {"magnesium", "Magnesium"},
    {"ptt", "PTT"},
    {"potassium", "Potassium"},
    {"sgpt", "SGPT"},
    {"arterial_blood_gas", "Arterial Blood Gas"},
    {"bun", "BUN"},
    {"chloride", "Chloride"},
    {"bicarbonate", "Bicarbonate"},
    {"inr", "INR"},
    {"sodium", "Sodium"},
    {"arterial_lactate", "Arterial Lactate"},
    {"co2", "CO2"},
    {"creatinine", "Creatinine"},
    {"ionised_calcium", "Ionised Calcium"},
    {"pt", "PT"},
    {"platelets_count", "Platelets Count"},
    {"sgot", "SGOT"},
    {"total_bilirubin", "Total bilirubin"},
    {"wbc_count", "White Blood Cell Count"},
    // Vital signs
    {"diastolic_bp", "Diastolic Blood Pressure"},
    {"systolic_bp", "Systolic Blood Pressure"},
    {"mean_bp", "Mean Blood Pressure"},
    {"paco2", "PaCO2"},
    {"pao2", "PaO2"},
    {"fio2", "FiO2"},
    {"pao2_fio2_ratio", "PaO/FiO2 ratio"},
    {"respiratory_rate", "Respiratory Rate"},
    {"temperature_c", "Temperature (Celsius)"},
    {"weight_kg", "Weight (kg)"},
    {"heart_rate", "Heart Rate"},
    {"spo2", "SpO2"},
    // Intake and output events
    {"fluid_output_4h", "Fluid Output - 4 hourly period"},
    {"total_fluid_output", "Total Fluid Output"},
    {"mechanical_ventilation", "Mechanical Ventilation"},
    // Miscellaneous
    {"timestep", "Timestep"},
}};

int index_of(std::string_view name) {
  for (int i = 0; i < kNumFeatures; ++i) {
    if (kSchema[i].column == name || kSchema[i].display == name) return i;
  }
  throw ValidationError("unknown feature: " + std::string(name));
}

}  // namespace features

bool StateVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

Action Action::from_flat(int flat) {
  if (flat < 0 || flat >= kNumActions)
    throw ValidationError("action index out of range: " + std::to_string(flat));
  return Action{flat / kBinsPerDrug, flat % kBinsPerDrug};
}

std::string_view outcome_name(Outcome o) {
  return o == Outcome::kSurvived ? "survived" : "died";
}

void RewardConfig::validate() const {
  if (!(terminal_magnitude > 0.0) || !std::isfinite(terminal_magnitude))
    throw ValidationError("reward.terminal_magnitude must be positive");
  if (!std::isfinite(c0) || !std::isfinite(c1) || !std::isfinite(c2))
    throw ValidationError("reward constants must be finite");
}

void ActionBinning::validate() const {
  auto check = [](const std::array<double, 3>& t, const char* drug) {
    if (!(t[0] > 0.0 && t[0] < t[1] && t[1] < t[2]) || !std::isfinite(t[2]))
      throw ValidationError(std::string(drug) +
                            " thresholds must be positive and strictly ascending");
  };
  check(iv_thresholds, "IV fluid");
  check(vp_thresholds, "vasopressor");
}

double percentile_linear(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

namespace {

std::array<double, 3> quartiles_of_positive(std::span<const double> doses,
                                            const char* drug) {
  std::vector<double> pos;
  for (double d : doses) {
    if (!std::isfinite(d) || d < 0.0)
      throw ValidationError(std::string("invalid ") + drug + " dose in binning data");
    if (d > 0.0) pos.push_back(d);
  }
  if (pos.size() < 4)
    throw ValidationError(std::string("fewer than 4 positive ") + drug + " doses");
  std::sort(pos.begin(), pos.end());
  return {percentile_linear(pos, 0.25), percentile_linear(pos, 0.50),
          percentile_linear(pos, 0.75)};
}

}  // namespace

ActionBinning fit_binning(std::span<const double> iv_doses,
                          std::span<const double> vp_doses) {
  ActionBinning b;
  b.iv_thresholds = quartiles_of_positive(iv_doses, "IV fluid");
  b.vp_thresholds = quartiles_of_positive(vp_doses, "vasopressor");
  b.validate();
  return b;
}

int dose_bin(double dose, const std::array<double, 3>& thresholds) {
  if (!std::isfinite(dose) || dose < 0.0)
    throw ValidationError("dose must be finite and non-negative, got " +
                          format_double(dose));
  if (dose == 0.0) return 0;
  for (int k = 0; k < 3; ++k)
    if (dose <= thresholds[k]) return k + 1;
  return 4;
}

Action discretize(double iv_dose, double vp_dose, const ActionBinning& binning) {
  return Action{dose_bin(iv_dose, binning.iv_thresholds),
                dose_bin(vp_dose, binning.vp_thresholds)};
}

double reward_intermediate(const StateVector& s_t, const StateVector& s_next,
                           const RewardConfig& cfg) {
  const double sofa_t = s_t.sofa();
  const double sofa_next = s_next.sofa();
  const double stay = (sofa_next == sofa_t && sofa_next > 0.0) ? 1.0 : 0.0;
  return cfg.c0 * stay + cfg.c1 * (sofa_next - sofa_t) +
         cfg.c2 * std::tanh(s_next.lactate() - s_t.lactate());
}

double reward_terminal(Outcome outcome, const RewardConfig& cfg) {
  return outcome == Outcome::kSurvived ? cfg.terminal_magnitude
                                       : -cfg.terminal_magnitude;
}

GroupedRecords group_and_validate(std::vector<RawRecord> rows) {
  std::map<std::string, PatientRecords> by_patient;
  for (auto& r : rows) {
    auto& p = by_patient[r.patient_id];
    p.patient_id = r.patient_id;
    p.rows.push_back(std::move(r));
  }

  GroupedRecords out;
  for (auto& [id, p] : by_patient) {
    std::string reason;
    for (std::size_t i = 0; i < p.rows.size() && reason.empty(); ++i) {
      const RawRecord& r = p.rows[i];
      const std::string where =
          r.line > 0 ? " (line " + std::to_string(r.line) + ")" : " (row " + std::to_string(i) + ")";
      if (!r.error.empty()) {
        reason = r.error + where;
      } else if (i > 0 && r.t <= p.rows[i - 1].t) {
        reason = "non-monotone timestamps" + where;
      } else if (!r.features.all_finite()) {
        reason = "non-finite feature" + where;
      } else if (!std::isfinite(r.iv_dose) || r.iv_dose < 0.0 ||
                 !std::isfinite(r.vp_dose) || r.vp_dose < 0.0) {
        reason = "negative or non-finite dose" + where;
      } else if (i + 1 < p.rows.size() && r.outcome.has_value()) {
        reason = "outcome given before final row" + where;
      } else if (i + 1 == p.rows.size() && !r.outcome.has_value()) {
        reason = "missing outcome on final row" + where;
      }
    }
    if (reason.empty()) {
      out.patients.push_back(std::move(p));
    } else {
      out.rejected.push_back({id, reason});
    }
  }
  return out;
}

Outcome patient_outcome(const PatientRecords& p) {
  if (p.rows.empty() || !p.rows.back().outcome)
    throw ValidationError("patient " + p.patient_id + " has no outcome");
  return *p.rows.back().outcome;
}

BuildResult build_trajectories(std::span<const PatientRecords> patients,
                               const ActionBinning& binning,
                               const RewardConfig& cfg) {
  cfg.validate();
  BuildResult result;
  for (const auto& p : patients) {
    try {
      if (p.rows.empty()) throw ValidationError("no rows");
      Trajectory traj;
      traj.patient_id = p.patient_id;
      traj.outcome = patient_outcome(p);
      const std::size_t n = p.rows.size();
      traj.transitions.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const RawRecord& row = p.rows[i];
        if (i > 0 && row.t <= p.rows[i - 1].t)
          throw ValidationError("non-monotone timestamps");
        if (!row.features.all_finite()) throw ValidationError("non-finite feature");
        Transition tr;
        tr.patient_id = p.patient_id;
        tr.t = static_cast<int>(i);
        tr.state = row.features;
        try {
          tr.action = discretize(row.iv_dose, row.vp_dose, binning);
        } catch (const ValidationError& e) {
          throw ValidationError(std::string(e.what()) + " at row " + std::to_string(i));
        }
        if (i + 1 < n) {
          tr.next_state = p.rows[i + 1].features;
          tr.reward = reward_intermediate(tr.state, tr.next_state, cfg);
          tr.terminal = false;
        } else {
          tr.next_state = row.features;
          tr.reward = reward_terminal(traj.outcome, cfg);
          tr.terminal = true;
        }
        traj.transitions.push_back(std::move(tr));
      }
      result.trajectories.push_back(std::move(traj));
    } catch (const ValidationError& e) {
      result.rejected.push_back({p.patient_id, e.what()});
    }
  }
  std::sort(result.trajectories.begin(), result.trajectories.end(),
            [](const Trajectory& a, const Trajectory& b) { return a.patient_id < b.patient_id; });
  return result;
}

FeatureScaler FeatureScaler::fit(std::span<const Trajectory> trajectories) {
  FeatureScaler s;
  std::array<double, kNumFeatures> sum{}, sumsq{};
  double n = 0.0;
  // Two-pass for numerical stability.
  for (const auto& tr : trajectories)
    for (const auto& x : tr.transitions) {
      for (int f = 0; f < kNumFeatures; ++f) sum[f] += x.state[f];
      n += 1.0;
    }
  if (n == 0.0) throw ValidationError("cannot fit scaler on empty data");
  for (int f = 0; f < kNumFeatures; ++f) s.mean[f] = sum[f] / n;
  for (const auto& tr : trajectories)
    for (const auto& x : tr.transitions)
      for (int f = 0; f < kNumFeatures; ++f) {
        const double d = x.state[f] - s.mean[f];
        sumsq[f] += d * d;
      }
  for (int f = 0; f < kNumFeatures; ++f) {
    const double sd = std::sqrt(sumsq[f] / n);
    s.stddev[f] = sd < 1e-12 ? 1.0 : sd;
  }
  return s;
}

FeatureScaler FeatureScaler::identity() {
  FeatureScaler s;
  s.mean.fill(0.0);
  s.stddev.fill(1.0);
  return s;
}

StateVector FeatureScaler::transform(const StateVector& s) const {
  StateVector out;
  for (int f = 0; f < kNumFeatures; ++f) out[f] = (s[f] - mean[f]) / stddev[f];
  return out;
}

std::size_t count_transitions(std::span<const Trajectory> trajectories) {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.transitions.size();
  return n;
}

}  // namespace septic_rl
