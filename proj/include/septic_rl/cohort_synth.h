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

// Synthetic septic cohorts drawn from a latent-severity MDP with noisy
// 48-feature emissions, plus exact solutions of that MDP used as test
// oracles.
//
// Episode dynamics, per 4-hour step t with latent severity s:
//   1. emit the observed row for (s, t);
//   2. the clinician draws action a ~ pi_c(. | s) and a raw dose per drug
//      uniformly inside that action's dose interval;
//   3. s' ~ P(. | s, a);
//   4. with probability death_hazard[s'] the patient dies and the episode
//      ends; else with probability discharge_hazard[s'] the patient survives
//      and the episode ends; else, at the last allowed step the episode is
//      closed with death probability h_d / (h_d + h_s) (survival when both
//      are zero); otherwise the next step starts in s'.
// SOFA is deterministic in severity. Lactate is a severity level plus a
// constant per-patient offset plus an accumulated treatment debt that grows
// by lactate_rise per unit of dose mismatch |iv - iv*(s)| + |vp - vp*(s)|
// at every step, so the reward of every transition is a function of
// (s, a, s') and the outcome.

#ifndef SEPTIC_RL_COHORT_SYNTH_H_
#define SEPTIC_RL_COHORT_SYNTH_H_

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "septic_rl/common.h"
#include "septic_rl/mdp.h"

namespace septic_rl {


// Parametric description of the default simulator; build_sim_config expands
// it into full tables.
struct SimParams {
  std::uint64_t seed = 7;
  int n_severity_levels = 8;
  int max_horizon = 20;
  // Negative disables calibration and uses death_hazard_scale as given.
  double target_death_fraction = 0.129;
  double death_hazard_scale = 1.0;
  bool equalize_dose_bins = true;

  double improve_base = 0.55;
  double improve_decay = 0.9;
  double worsen_base = 0.10;
  double worsen_max = 0.60;
  double worsen_rate = 0.5;

  double discharge_base = 0.32;
  double discharge_exponent = 1.5;
  double discharge_floor = 0.02;
  double death_base = 0.30;
  double death_exponent = 2.0;

  // Lactate at severity s: base + linear * u + quadratic * u^2 with
  // u = 7 s / (n - 1).
  double lactate_base = 1.0;
  double lactate_linear = 0.45;
  double lactate_quadratic = 0.04;
  double lactate_rise_per_mismatch = 0.6;

  // Initial severity ~ discretized Gaussian over severity / (n - 1).
  double initial_center = 0.3;
  double initial_width = 0.28;

  double clinician_iv_temperature = 1.0;
  double clinician_vp_temperature = 1.6;
  double clinician_uniform_mix = 0.05;
};

struct FeatureEmission {
  double base = 0.0;
  double per_severity = 0.0;
  double patient_sd = 0.0;
  double noise_sd = 0.0;
  double lo = -1e300;
  double hi = 1e300;
  bool binary = false;  // Bernoulli(clamp(base + per_severity * s, 0, 1))
  bool per_patient = false;  // drawn once per patient (e.g. gender, age)
};

struct SimMDPConfig {
  int n_severity = 0;
  int max_horizon = 20;
  std::uint64_t seed = 7;
  // transition[(s * kNumActions + a) * n_severity + s'] = P(s' | s, a)
  std::vector<double> transition;
  std::vector<ActionDistribution> clinician;  // per severity
  std::vector<double> initial;                // initial severity distribution
  std::vector<double> death_hazard;
  std::vector<double> discharge_hazard;
  std::vector<double> sofa;     // per severity
  std::vector<double> lactate;  // per severity, before patient offset
  double lactate_patient_sd = 0.15;
  double lactate_rise = 0.0;  // per unit mismatch per step
  std::array<FeatureEmission, kNumFeatures> emission{};
  // Dose interval edges: bin k > 0 spans (edges[k-1], edges[k]].
  std::array<double, 5> iv_edges{0.0, 50.0, 180.0, 530.0, 1500.0};
  std::array<double, 5> vp_edges{0.0, 0.08, 0.22, 0.45, 1.2};
  std::vector<int> ideal_iv, ideal_vp;
  RewardConfig reward;

  double p(int s, int a, int s_next) const {
    return transition[(static_cast<std::size_t>(s) * kNumActions + a) * n_severity + s_next];
  }
  // L1 distance of action a from the ideal dose bins of severity s.
  int mismatch(int s, int a) const;
  // Throws ValidationError on rows that do not sum to 1, hazards that are
  // not monotone, or SOFA not strictly increasing.
  void validate() const;
};

SimMDPConfig build_sim_config(const SimParams& params, const RewardConfig& reward = {});

// Reward of a non-terminal step (s, a) -> s', evaluated through mdp_core.
double latent_reward(const SimMDPConfig& cfg, int s, int a, int s_next);

// Expected per-severity visit counts and outcome probabilities of the capped
// process under a policy.
struct OccupancySummary {
  std::vector<double> visits;  // expected rows per patient in each severity
  std::array<double, kNumActions> action_counts{};
  double death_probability = 0.0;
  double mean_length = 0.0;
};
OccupancySummary occupancy(const SimMDPConfig& cfg, const std::vector<ActionDistribution>& policy);

struct CohortStats {
  std::size_t patients = 0;
  std::size_t died = 0;
  double died_fraction = 0.0;
  double female_survivors = 0.0;
  double female_nonsurvivors = 0.0;
  double mean_age_survivors = 0.0;
  double mean_age_nonsurvivors = 0.0;
  double mean_hours_survivors = 0.0;
  double mean_hours_nonsurvivors = 0.0;
  double mean_length = 0.0;
};

struct SyntheticCohort {
  std::vector<RawRecord> rows;
  std::vector<int> severity;          // latent severity per row
  std::vector<int> clinician_action;  // generator flat action per row
  std::vector<double> reward;         // simulator reward per row
  CohortStats stats;
};

// Deterministic in cfg.seed regardless of thread count.
SyntheticCohort generate_cohort(const SimMDPConfig& cfg, std::size_t n_patients);

void write_cohort_stats_json(std::ostream& out, const CohortStats& stats);

// Maps an observed (unscaled) state to the severity with the nearest SOFA.
int classify_severity(const SimMDPConfig& cfg, const StateVector& raw_state);

// Emission of one row for a synthetic patient.
struct PatientProfile {
  std::array<double, kNumFeatures> offset{};
  std::array<double, kNumFeatures> fixed{};
};
PatientProfile sample_profile(const SimMDPConfig& cfg, int initial_severity, Rng& rng);
StateVector emit_state(const SimMDPConfig& cfg, const PatientProfile& profile, int severity,
                       int t, double lactate_debt, Rng& rng);

struct OracleSolution {
  double gamma = 0.99;
  std::vector<ActionDistribution> q_star;  // per severity
  std::vector<int> optimal_action;         // flat index, ties to lowest
  std::vector<double> v_star;
  double bellman_residual = 0.0;
  std::vector<double> clinician_value;         // stationary, per severity
  std::vector<double> optimal_value_capped;    // capped process, per severity
  std::vector<double> clinician_value_capped;
  double optimal_policy_value = 0.0;    // capped, initial-distribution weighted
  double clinician_policy_value = 0.0;
};

// Value iteration to a residual below 1e-10 on the stationary latent MDP.
OracleSolution solve_oracle(const SimMDPConfig& cfg, double gamma);

std::vector<ActionDistribution> deterministic_policy(const std::vector<int>& actions);

// Exact evaluation of a stationary policy on the uncapped chain (linear solve).
std::vector<double> evaluate_policy(const SimMDPConfig& cfg,
                                    const std::vector<ActionDistribution>& policy, double gamma);
// Exact evaluation of the capped process, value at t = 0 per severity.
std::vector<double> evaluate_policy_capped(const SimMDPConfig& cfg,
                                           const std::vector<ActionDistribution>& policy,
                                           double gamma);
double initial_value(const SimMDPConfig& cfg, const std::vector<double>& per_severity);

// Severity-level action distribution induced by an observation-level policy:
// each observed state is assigned a severity by classify_severity and the
// policy's actions are tabulated. Severities with no observed state are
// estimated from `fallback_samples` freshly emitted rows with zero debt.
std::vector<ActionDistribution> policy_from_observations(
    const SimMDPConfig& cfg, std::span<const StateVector> observed,
    const std::function<int(const StateVector&)>& act, int fallback_samples,
    std::uint64_t seed);

void write_oracle_json(std::ostream& out, const SimMDPConfig& cfg, const OracleSolution& sol);

}  // namespace septic_rl

#endif  // SEPTIC_RL_COHORT_SYNTH_H_
