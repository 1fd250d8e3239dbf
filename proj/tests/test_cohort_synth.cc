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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <map>
#include <sstream>

#include "json.hpp"
#include "septic_rl/cohort_synth.h"
#include "septic_rl/ope.h"
#include "septic_rl/trajectory_csv.h"

using namespace septic_rl;

namespace {

const SimMDPConfig& default_sim() {
  static const SimMDPConfig cfg = build_sim_config(SimParams{});
  return cfg;
}

std::string csv_of(const SyntheticCohort& c) {
  std::ostringstream os;
  write_trajectory_csv(os, c.rows);
  return os.str();
}

// Two severities; action 0 is "treat", every other action behaves like 1.
SimMDPConfig two_state_mdp() {
  SimMDPConfig c;
  c.n_severity = 2;
  c.max_horizon = 20;
  c.transition.assign(2 * kNumActions * 2, 0.0);
  const double p_stay[2][2] = {{0.9, 0.6}, {0.3, 0.8}};  // [s][a'] P(s' = s)
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < kNumActions; ++a) {
      const int k = a == 0 ? 0 : 1;
      c.transition[(s * kNumActions + a) * 2 + s] = p_stay[s][k];
      c.transition[(s * kNumActions + a) * 2 + (1 - s)] = 1.0 - p_stay[s][k];
    }
  ActionDistribution uniform;
  uniform.fill(1.0 / kNumActions);
  c.clinician = {uniform, uniform};
  c.initial = {0.7, 0.3};
  c.death_hazard = {0.01, 0.2};
  c.discharge_hazard = {0.3, 0.05};
  c.sofa = {2.0, 9.0};
  c.lactate = {1.0, 3.0};
  c.ideal_iv = {0, 0};
  c.ideal_vp = {0, 0};
  c.lactate_rise = 0.0;
  return c;
}

double hand_reward(const SimMDPConfig& c, int s, int s2) {
  const RewardConfig r;
  const double stay = (s == s2 && c.sofa[s2] > 0) ? 1.0 : 0.0;
  return r.c0 * stay + r.c1 * (c.sofa[s2] - c.sofa[s]) + r.c2 * std::tanh(c.lactate[s2] - c.lactate[s]);
}

}  // namespace

TEST_CASE("default config satisfies its invariants") {
  const SimMDPConfig& c = default_sim();
  CHECK_NOTHROW(c.validate());
  CHECK(c.n_severity == 8);
  CHECK(c.max_horizon == 20);
  for (int s = 0; s < c.n_severity; ++s)
    for (int a = 0; a < kNumActions; ++a) {
      double row = 0.0;
      for (int s2 = 0; s2 < c.n_severity; ++s2) row += c.p(s, a, s2);
      CHECK(std::abs(row - 1.0) <= 1e-9);
    }
  for (int s = 1; s < c.n_severity; ++s) {
    CHECK(c.death_hazard[s] >= c.death_hazard[s - 1]);
    CHECK(c.discharge_hazard[s] <= c.discharge_hazard[s - 1]);
    CHECK(c.sofa[s] > c.sofa[s - 1]);
  }
}

TEST_CASE("validate rejects broken tables") {
  SimMDPConfig c = default_sim();
  c.transition[0] += 0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = default_sim();
  std::swap(c.death_hazard[0], c.death_hazard[7]);
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = default_sim();
  c.sofa[3] = c.sofa[2];
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("low-severity clinician prescribes vasopressors sparingly") {
  const SimMDPConfig& c = default_sim();
  for (int s = 0; s < 4; ++s) {
    double vp0 = 0.0;
    for (int a = 0; a < kNumActions; ++a)
      if (Action::from_flat(a).vp_bin == 0) vp0 += c.clinician[s][a];
    CHECK(vp0 > 0.6);
  }
}

TEST_CASE("fixed seed gives byte-identical CSV regardless of thread count") {
  setenv("SEPTIC_RL_THREADS", "1", 1);
  const std::string a = csv_of(generate_cohort(default_sim(), 300));
  setenv("SEPTIC_RL_THREADS", "4", 1);
  const std::string b = csv_of(generate_cohort(default_sim(), 300));
  unsetenv("SEPTIC_RL_THREADS");
  CHECK(a == b);
  SimMDPConfig other = default_sim();
  other.seed = 99;
  CHECK(csv_of(generate_cohort(other, 300)) != a);
}

TEST_CASE("zero death hazard gives only survivors") {
  SimParams p;
  p.target_death_fraction = -1.0;
  p.death_hazard_scale = 0.0;
  const SyntheticCohort c = generate_cohort(build_sim_config(p), 500);
  CHECK(c.stats.died == 0);
  for (const auto& r : c.rows)
    if (r.outcome) CHECK(*r.outcome == Outcome::kSurvived);
}

TEST_CASE("emitted rewards equal rewards recomputed by the MDP core") {
  const SimMDPConfig& sim = default_sim();
  const SyntheticCohort c = generate_cohort(sim, 400);
  ActionBinning edges;
  for (int k = 0; k < 3; ++k) {
    edges.iv_thresholds[k] = sim.iv_edges[k + 1];
    edges.vp_thresholds[k] = sim.vp_edges[k + 1];
  }
  const GroupedRecords g = group_and_validate(c.rows);
  CHECK(g.rejected.empty());
  const BuildResult b = build_trajectories(g.patients, edges, sim.reward);
  std::size_t row = 0;
  for (const auto& t : b.trajectories)
    for (const auto& tr : t.transitions) {
      CHECK(tr.reward == c.reward[row]);
      CHECK(tr.action.flat_index() == c.clinician_action[row]);
      // Non-terminal rewards are a function of the latent transition.
      if (!tr.terminal)
        CHECK(tr.reward == doctest::Approx(latent_reward(sim, c.severity[row], c.clinician_action[row],
                                                         c.severity[row + 1]))
                               .epsilon(1e-12));
      ++row;
    }
  CHECK(row == c.rows.size());
}

TEST_CASE("every emitted state classifies to its latent severity") {
  const SimMDPConfig& sim = default_sim();
  const SyntheticCohort c = generate_cohort(sim, 300);
  for (std::size_t i = 0; i < c.rows.size(); ++i)
    CHECK(classify_severity(sim, c.rows[i].features) == c.severity[i]);
}

TEST_CASE("empirical transitions match the tensor over a million steps") {
  // Continuing rows only observe s' that did not end the episode, so the
  // expected conditional law is P(s'|s,a) c(s') / sum, c = continuation.
  const SimMDPConfig& sim = default_sim();
  const SyntheticCohort c = generate_cohort(sim, 250000);
  const int n = sim.n_severity;
  std::map<std::pair<int, int>, std::vector<double>> counts;
  std::vector<std::vector<double>> marginal(n, std::vector<double>(n, 0.0));
  std::size_t steps = 0;
  for (std::size_t i = 0; i + 1 < c.rows.size(); ++i) {
    if (c.rows[i].outcome || c.rows[i].t + 1 >= sim.max_horizon) continue;
    auto& v = counts[{c.severity[i], c.clinician_action[i]}];
    v.resize(n, 0.0);
    v[c.severity[i + 1]] += 1.0;
    marginal[c.severity[i]][c.severity[i + 1]] += 1.0;
    ++steps;
  }
  CHECK(steps >= 1000000);
  auto expected = [&](int s, int a) {
    std::vector<double> q(n);
    double z = 0.0;
    for (int s2 = 0; s2 < n; ++s2) {
      q[s2] = sim.p(s, a, s2) * (1.0 - sim.death_hazard[s2] - sim.discharge_hazard[s2]);
      z += q[s2];
    }
    for (auto& x : q) x /= z;
    return q;
  };
  int checked = 0;
  for (const auto& [key, v] : counts) {
    double total = 0.0;
    for (double x : v) total += x;
    if (total < 30000) continue;
    const auto q = expected(key.first, key.second);
    for (int s2 = 0; s2 < n; ++s2) CHECK(std::abs(v[s2] / total - q[s2]) <= 0.01);
    ++checked;
  }
  CHECK(checked >= 2);
  // Severity-level law under the clinician, weighted by observed action use.
  for (int s = 0; s < n; ++s) {
    double total = 0.0, rows_s = 0.0;
    for (double x : marginal[s]) total += x;
    if (total < 1000) continue;
    std::vector<double> q(n, 0.0);
    for (const auto& [key, v] : counts) {
      if (key.first != s) continue;
      double w = 0.0;
      for (double x : v) w += x;
      const auto e = expected(s, key.second);
      for (int s2 = 0; s2 < n; ++s2) q[s2] += w * e[s2];
      rows_s += w;
    }
    for (int s2 = 0; s2 < n; ++s2) CHECK(std::abs(marginal[s][s2] / total - q[s2] / rows_s) <= 0.01);
  }
}

TEST_CASE("raw doses fall inside the clinician action's bin interval") {
  const SimMDPConfig& sim = default_sim();
  const SyntheticCohort c = generate_cohort(sim, 200);
  ActionBinning edges;
  for (int k = 0; k < 3; ++k) {
    edges.iv_thresholds[k] = sim.iv_edges[k + 1];
    edges.vp_thresholds[k] = sim.vp_edges[k + 1];
  }
  for (std::size_t i = 0; i < c.rows.size(); ++i)
    CHECK(discretize(c.rows[i].iv_dose, c.rows[i].vp_dose, edges).flat_index() ==
          c.clinician_action[i]);
}

TEST_CASE("oracle: gamma 0 gives expected immediate reward") {
  const SimMDPConfig& sim = default_sim();
  const OracleSolution sol = solve_oracle(sim, 0.0);
  const double big = sim.reward.terminal_magnitude;
  for (int s = 0; s < sim.n_severity; ++s) {
    int best = 0;
    for (int a = 0; a < kNumActions; ++a) {
      double r = 0.0;
      for (int s2 = 0; s2 < sim.n_severity; ++s2) {
        const double hd = sim.death_hazard[s2], hs = sim.discharge_hazard[s2];
        r += sim.p(s, a, s2) *
             (-big * hd + big * hs + (1.0 - hd - hs) * latent_reward(sim, s, a, s2));
      }
      CHECK(sol.q_star[s][a] == doctest::Approx(r).epsilon(1e-12));
      if (sol.q_star[s][a] > sol.q_star[s][best]) best = a;
    }
    CHECK(sol.optimal_action[s] == best);
  }
}

TEST_CASE("oracle: two-severity MDP matches the closed-form 2x2 solve") {
  const SimMDPConfig c = two_state_mdp();
  const double gamma = 0.9, big = 15.0;
  // R[s][k], C[s][k][s'] for k = 0 (action 0) and k = 1 (any other action).
  double R[2][2], C[2][2][2];
  for (int s = 0; s < 2; ++s)
    for (int k = 0; k < 2; ++k) {
      R[s][k] = 0.0;
      for (int s2 = 0; s2 < 2; ++s2) {
        const double p = c.p(s, k, s2);
        const double hd = c.death_hazard[s2], hs = c.discharge_hazard[s2];
        const double cont = 1.0 - hd - hs;
        R[s][k] += p * (-big * hd + big * hs + cont * hand_reward(c, s, s2));
        C[s][k][s2] = p * cont;
      }
    }
  double best_v0 = -1e300, best_v1 = 0.0;
  for (int k0 = 0; k0 < 2; ++k0)
    for (int k1 = 0; k1 < 2; ++k1) {
      // (I - gamma C) V = R by Cramer's rule.
      const double a = 1 - gamma * C[0][k0][0], b = -gamma * C[0][k0][1];
      const double d = -gamma * C[1][k1][0], e = 1 - gamma * C[1][k1][1];
      const double det = a * e - b * d;
      const double v0 = (R[0][k0] * e - b * R[1][k1]) / det;
      const double v1 = (a * R[1][k1] - d * R[0][k0]) / det;
      if (v0 > best_v0) {
        best_v0 = v0;
        best_v1 = v1;
      }
    }
  const OracleSolution sol = solve_oracle(c, gamma);
  CHECK(sol.v_star[0] == doctest::Approx(best_v0).epsilon(1e-9));
  CHECK(sol.v_star[1] == doctest::Approx(best_v1).epsilon(1e-9));
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < kNumActions; ++a) {
      const int k = a == 0 ? 0 : 1;
      const double q = R[s][k] + gamma * (C[s][k][0] * best_v0 + C[s][k][1] * best_v1);
      CHECK(sol.q_star[s][a] == doctest::Approx(q).epsilon(1e-9));
    }
  for (int s = 0; s < 2; ++s) CHECK((sol.optimal_action[s] == 0 || sol.optimal_action[s] == 1));
}

TEST_CASE("oracle: Bellman fixed point and dominance over the clinician") {
  const SimMDPConfig& sim = default_sim();
  const OracleSolution sol = solve_oracle(sim, 0.99);
  CHECK(sol.bellman_residual < 1e-8);
  for (int s = 0; s < sim.n_severity; ++s) {
    CHECK(sol.clinician_value[s] <= sol.v_star[s] + 1e-9);
    CHECK(sol.clinician_value_capped[s] <= sol.optimal_value_capped[s] + 1e-9);
  }
  CHECK(sol.clinician_policy_value < sol.optimal_policy_value);
  const auto exact = evaluate_policy(sim, deterministic_policy(sol.optimal_action), 0.99);
  for (int s = 0; s < sim.n_severity; ++s) CHECK(exact[s] == doctest::Approx(sol.v_star[s]).epsilon(1e-8));
}

TEST_CASE("oracle: gamma 1 needs termination everywhere") {
  SimMDPConfig c = two_state_mdp();
  c.death_hazard = {0.0, 0.0};
  c.discharge_hazard = {0.0, 0.0};
  CHECK_THROWS_AS(solve_oracle(c, 1.0), ValidationError);
  CHECK_NOTHROW(solve_oracle(c, 0.5));
}

TEST_CASE("capped clinician value matches the cohort's discounted return") {
  const SimMDPConfig& sim = default_sim();
  const OracleSolution sol = solve_oracle(sim, 0.99);
  const SyntheticCohort c = generate_cohort(sim, 20000);
  ActionBinning edges;
  for (int k = 0; k < 3; ++k) {
    edges.iv_thresholds[k] = sim.iv_edges[k + 1];
    edges.vp_thresholds[k] = sim.vp_edges[k + 1];
  }
  const auto b = build_trajectories(group_and_validate(c.rows).patients, edges, sim.reward);
  std::vector<double> returns;
  for (const auto& t : b.trajectories) returns.push_back(behavior_value(std::span(&t, 1), 0.99));
  double mean = 0.0;
  for (double r : returns) mean += r / returns.size();
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean) / (returns.size() - 1);
  const double se = std::sqrt(var / returns.size());
  CHECK(mean == doctest::Approx(behavior_value(b.trajectories, 0.99)).epsilon(1e-9));
  CHECK(std::abs(mean - sol.clinician_policy_value) <= 2.0 * se);
}

TEST_CASE("occupancy death probability matches the calibrated cohort") {
  const SimMDPConfig& sim = default_sim();
  const OccupancySummary occ = occupancy(sim, sim.clinician);
  CHECK(std::abs(occ.death_probability - 0.129) < 1e-4);
  const SyntheticCohort c = generate_cohort(sim, 5000);
  CHECK(std::abs(c.stats.died_fraction - occ.death_probability) < 0.02);
  CHECK(std::abs(c.stats.mean_length - occ.mean_length) < 0.3);
}

TEST_CASE("policy_from_observations tabulates per classified severity") {
  const SimMDPConfig& sim = default_sim();
  const SyntheticCohort c = generate_cohort(sim, 100);
  std::vector<StateVector> obs;
  for (const auto& r : c.rows) obs.push_back(r.features);
  const auto pi = policy_from_observations(
      sim, obs, [&](const StateVector& x) { return classify_severity(sim, x) % 3; }, 50, 1);
  for (int s = 0; s < sim.n_severity; ++s) {
    CHECK(pi[s][s % 3] == doctest::Approx(1.0));
    double total = 0.0;
    for (double p : pi[s]) total += p;
    CHECK(total == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(policy_from_observations(sim, {}, [](const StateVector&) { return 0; }, 0, 1),
                  ValidationError);
}

TEST_CASE("oracle and stats JSON carry the documented fields") {
  const SimMDPConfig& sim = default_sim();
  std::ostringstream os;
  write_oracle_json(os, sim, solve_oracle(sim, 0.99));
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j.at("q_star").size() == 8);
  CHECK(j.at("optimal_policy").size() == 8);
  CHECK(j.contains("clinician_value"));
  std::ostringstream st;
  write_cohort_stats_json(st, generate_cohort(sim, 200).stats);
  const auto s = nlohmann::json::parse(st.str());
  CHECK(s.at("patients").get<int>() == 200);
  CHECK(s.contains("died_fraction"));
}
