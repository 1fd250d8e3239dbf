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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and runtime limits are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.h"
#include "septic_rl/analysis.h"
#include "septic_rl/checkpoint.h"
#include "septic_rl/cohort_synth.h"
#include "septic_rl/ope.h"
#include "septic_rl/pipeline.h"
#include "septic_rl/replay.h"
#include "septic_rl/train.h"

using namespace septic_rl;

namespace {

constexpr double kRewardTolerance = 1e-12;
constexpr double kGradTolerance = 1e-4;
constexpr int kGradSeeds = 5;
constexpr int kGradHidden = 96;
constexpr double kTreeRootTolerance = 1e-9;
constexpr double kTreeSampleTolerance = 0.02;
constexpr double kMatchThreshold = 0.85;
constexpr double kValueFraction = 0.10;
constexpr int kOraclePatients = 2000;
constexpr long long kOracleBatches = 20000;
constexpr double kDrEpsilon = 0.1;
constexpr int kDrSets = 200;
constexpr int kDrSetSize = 100;
constexpr double kDrStandardErrors = 2.0;
constexpr double kVpZeroShare = 0.6;
constexpr int kCohortPatients = 17898;
constexpr double kDiedFraction = 0.129;
constexpr double kDiedTolerance = 0.01;
constexpr int kDeterminismBatches = 1500;
constexpr int kRoundTripStates = 1000;

constexpr double kGamma = 0.99;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

int g_failures = 0;

void report(const std::string& name, const std::function<Verdict()>& body,
            std::optional<double> runtime_limit_s = std::nullopt) {
  const auto start = Clock::now();
  Verdict o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  bool pass = o.pass;
  std::ostringstream line;
  line << o.detail << "; runtime " << format_double(std::round(secs * 100.0) / 100.0) << "s";
  if (runtime_limit_s) {
    line << " (limit " << format_double(*runtime_limit_s) << "s)";
    if (secs > *runtime_limit_s) pass = false;
  }
  if (!pass) ++g_failures;
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), line.str().c_str());
  std::fflush(stdout);
}

std::string fmt(double v) { return format_double(std::round(v * 1e6) / 1e6); }

const SimMDPConfig& default_sim() {
  static const SimMDPConfig cfg = build_sim_config(SimParams{});
  return cfg;
}

// Expected one-step return under the simulator's termination convention.
double backup(const SimMDPConfig& sim, int s, int a, const std::vector<double>& v, double gamma) {
  const double big = sim.reward.terminal_magnitude;
  double q = 0.0;
  for (int s2 = 0; s2 < sim.n_severity; ++s2) {
    const double hd = sim.death_hazard[s2], hs = sim.discharge_hazard[s2];
    q += sim.p(s, a, s2) * (-big * hd + big * hs + (1.0 - hd - hs) * (latent_reward(sim, s, a, s2) + gamma * v[s2]));
  }
  return q;
}

// Shared by the recovery and figure criteria.
struct TrainedModel {
  PreparedData data;
  TrainResult result;
  OracleSolution oracle;
};

const TrainedModel& trained_model() {
  static const TrainedModel m = [] {
    TrainedModel t;
    const SimMDPConfig& sim = default_sim();
    t.data = prepare_dataset(generate_cohort(sim, kOraclePatients).rows, 0.8, 1, RewardConfig{});
    TrainingConfig cfg;
    cfg.batches = kOracleBatches;
    t.result = train(TransitionStore::build(t.data.train, t.data.scaler), cfg);
    t.oracle = solve_oracle(sim, kGamma);
    return t;
  }();
  return m;
}

Verdict reward_exactness() {
  const RewardConfig cfg;
  double worst = 0.0;
  for (const auto& c : septic_rl::testing::kRewardCases) {
    const double r = reward_intermediate(septic_rl::testing::state_with(c.sofa, c.lactate),
                                         septic_rl::testing::state_with(c.sofa_next, c.lactate_next), cfg);
    worst = std::max(worst, std::abs(r - c.expected));
  }
  const bool terminal = reward_terminal(Outcome::kSurvived, cfg) == 15.0 &&
                        reward_terminal(Outcome::kDied, cfg) == -15.0;
  const std::size_t n = std::size(septic_rl::testing::kRewardCases);
  return {worst <= kRewardTolerance && terminal && n == 20,
          std::to_string(n) + " cases, max abs error " + fmt(worst) + ", terminal +-15 " +
              (terminal ? "ok" : "wrong")};
}

Verdict gradient_correctness() {
  double worst = 0.0;
  std::string where;
  for (int seed = 1; seed <= kGradSeeds; ++seed) {
    const auto b = septic_rl::testing::gradient_batch(Head::kDueling, seed, 32, kGradHidden);
    const auto r = septic_rl::testing::gradient_check(b.params, b.x, b.actions, b.targets, b.weights, LossConfig{});
    if (r.worst > worst) {
      worst = r.worst;
      where = r.worst_tensor + " seed " + std::to_string(seed);
    }
  }
  std::ostringstream d;
  d << kGradSeeds << " batches of 32, hidden " << kGradHidden << ", every coordinate, worst relative error " << worst << " (" << where << ")";
  return {worst < kGradTolerance, d.str()};
}

Verdict sum_tree_fidelity() {
  Rng rng(2024);
  const std::size_t n = 1000;
  SumTree tree(n);
  std::vector<double> oracle(n, 0.0);
  double worst = 0.0;
  for (int step = 0; step < 10000; ++step) {
    const auto i = rng.below(n);
    const double v = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.0, 100.0);
    tree.set(i, v);
    oracle[i] = v;
    const double sum = std::accumulate(oracle.begin(), oracle.end(), 0.0);
    if (sum > 0.0) worst = std::max(worst, std::abs(tree.total() - sum) / sum);
  }

  ReplayConfig cfg;
  cfg.alpha = 1.0;
  cfg.capacity = 16;
  PrioritizedReplay replay(cfg);
  std::vector<double> pr;
  for (std::size_t i = 0; i < 16; ++i) {
    pr.push_back(rng.uniform(0.1, 5.0));
    replay.insert(i, pr.back());
  }
  const double total = std::accumulate(pr.begin(), pr.end(), 0.0);
  std::vector<double> hits(16, 0.0);
  const int draws = 100000, batch = 16;
  for (int k = 0; k < draws / batch; ++k)
    for (const auto& item : replay.sample(batch, 0.4, rng)) hits[item.transition] += 1.0;
  double worst_share = 0.0;
  for (std::size_t i = 0; i < 16; ++i) worst_share = std::max(worst_share, std::abs(hits[i] / draws - pr[i] / total));
  return {worst <= kTreeRootTolerance && worst_share <= kTreeSampleTolerance,
          "root relative error " + fmt(worst) + " over 10^4 updates; max share error " + fmt(worst_share) +
              " over 10^5 samples"};
}

Verdict oracle_recovery() {
  const TrainedModel& m = trained_model();
  const SimMDPConfig& sim = default_sim();
  const GreedyPolicy greedy(m.result.main, m.data.scaler);
  std::vector<StateVector> states;
  long long matched = 0, total = 0;
  for (const auto& t : m.data.test)
    for (const auto& tr : t.transitions) {
      states.push_back(tr.state);
      matched += greedy.act(tr.state) == m.oracle.optimal_action[classify_severity(sim, tr.state)];
      ++total;
    }
  const double match = static_cast<double>(matched) / static_cast<double>(total);
  const auto pi = policy_from_observations(sim, states, [&](const StateVector& x) { return greedy.act(x); }, 500, 3);
  const double v_model = initial_value(sim, evaluate_policy_capped(sim, pi, kGamma));
  const double v_opt = m.oracle.optimal_policy_value;
  const double v_clin = m.oracle.clinician_policy_value;
  const bool value_ok = v_model >= v_opt - kValueFraction * std::abs(v_opt) && v_model > v_clin;
  return {match >= kMatchThreshold && value_ok,
          "action match " + fmt(match) + " (need >= " + fmt(kMatchThreshold) + "), value " + fmt(v_model) +
              " vs optimal " + fmt(v_opt) + " and clinician " + fmt(v_clin) + ", " +
              std::to_string(kOracleBatches) + " batches on " + std::to_string(kOraclePatients) + " patients"};
}

Verdict dr_soundness() {
  const SimMDPConfig& sim = default_sim();
  const OracleSolution sol = solve_oracle(sim, kGamma);
  std::vector<ActionDistribution> pe_table(sim.n_severity);
  for (int s = 0; s < sim.n_severity; ++s) {
    pe_table[s].fill(kDrEpsilon / kNumActions);
    pe_table[s][sol.optimal_action[s]] += 1.0 - kDrEpsilon;
  }
  const double exact = initial_value(sim, evaluate_policy_capped(sim, pe_table, kGamma));

  // Q-hat: stationary Q of pi_e on the latent chain, an imperfect model of
  // the horizon-capped process.
  const std::vector<double> v_stat = evaluate_policy(sim, pe_table, kGamma);
  std::vector<ActionValues> q_table(sim.n_severity);
  for (int s = 0; s < sim.n_severity; ++s)
    for (int a = 0; a < kNumActions; ++a) q_table[s][a] = backup(sim, s, a, v_stat, kGamma);

  auto by_severity = [&](const auto& table) {
    return [&sim, &table](std::span<const StateVector> xs) {
      std::vector<std::decay_t<decltype(table[0])>> out;
      for (const auto& x : xs) out.push_back(table[classify_severity(sim, x)]);
      return out;
    };
  };
  const PolicyFn pi_e = by_severity(pe_table);
  const PolicyFn pi_b = by_severity(sim.clinician);
  const QFn q_hat = by_severity(q_table);

  // Independent test sets from fresh seeds.
  std::vector<double> means;
  std::vector<Trajectory> pooled;
  for (int k = 0; k < kDrSets; ++k) {
    SimMDPConfig cfg = sim;
    cfg.seed = 1000 + static_cast<std::uint64_t>(k);
    const SyntheticCohort c = generate_cohort(cfg, kDrSetSize);
    ActionBinning edges;
    for (int j = 0; j < 3; ++j) {
      edges.iv_thresholds[j] = sim.iv_edges[j + 1];
      edges.vp_thresholds[j] = sim.vp_edges[j + 1];
    }
    auto trajs = build_trajectories(group_and_validate(c.rows).patients, edges, sim.reward).trajectories;
    means.push_back(doubly_robust_value(trajs, pi_e, pi_b, q_hat, kGamma).mean);
    if (k < 20) pooled.insert(pooled.end(), trajs.begin(), trajs.end());
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / kDrSets;
  double var = 0.0;
  for (double m : means) var += (m - grand) * (m - grand) / (kDrSets - 1);
  const double se = std::sqrt(var / kDrSets);
  const bool unbiased = std::abs(grand - exact) <= kDrStandardErrors * se;

  // Deterministic pi_e: each trajectory's estimate must equal the recursion
  // cut at its first disagreement, where it collapses to V-hat.
  std::vector<ActionDistribution> det(sim.n_severity);
  for (int s = 0; s < sim.n_severity; ++s) {
    det[s].fill(0.0);
    det[s][sol.optimal_action[s]] = 1.0;
  }
  const PolicyFn pi_det = by_severity(det);
  const DREstimate est = doubly_robust_value(pooled, pi_det, pi_b, q_hat, kGamma);
  long long disagreeing = 0, collapsed_ok = 0, first_step = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const auto& tr = pooled[i].transitions;
    std::size_t k = 0;
    while (k < tr.size() && tr[k].action.flat_index() == sol.optimal_action[classify_severity(sim, tr[k].state)]) ++k;
    if (k == tr.size()) continue;
    ++disagreeing;
    auto v_hat = [&](const StateVector& x) { return q_table[classify_severity(sim, x)][sol.optimal_action[classify_severity(sim, x)]]; };
    double v = v_hat(tr[k].state);
    for (std::size_t t = k; t-- > 0;) {
      const int s = classify_severity(sim, tr[t].state);
      const double rho = 1.0 / sim.clinician[s][tr[t].action.flat_index()];
      v = v_hat(tr[t].state) + rho * (tr[t].reward + kGamma * v - q_table[s][tr[t].action.flat_index()]);
    }
    if (k == 0) {
      ++first_step;
      collapsed_ok += est.per_trajectory[i] == v_hat(tr[0].state);
    } else {
      collapsed_ok += std::abs(est.per_trajectory[i] - v) <= 1e-9 * std::max(1.0, std::abs(v));
    }
  }
  const double zero_frac = static_cast<double>(disagreeing) / static_cast<double>(pooled.size());
  const bool structural = collapsed_ok == disagreeing && std::abs(est.zero_is_fraction - zero_frac) < 1e-12 &&
                          first_step > 0;
  return {unbiased && structural,
          "mean DR " + fmt(grand) + " vs exact " + fmt(exact) + " (|diff| " + fmt(std::abs(grand - exact)) +
              ", 2 SE " + fmt(kDrStandardErrors * se) + "); zero-IS collapse " + std::to_string(collapsed_ok) +
              "/" + std::to_string(disagreeing) + " disagreeing trajectories"};
}

Verdict figure_one() {
  const TrainedModel& m = trained_model();
  const GreedyPolicy greedy(m.result.main, m.data.scaler);
  const HistogramSet h = action_histograms(m.data.test, greedy.act_all(m.data.test), SubcohortSpec{});
  const double phys_low = h.physician[0].vp_zero_fraction();
  const double phys_med = h.physician[1].vp_zero_fraction();
  const double model_low = h.model[0].vp_zero_fraction();
  const double model_high = h.model[2].vp_zero_fraction();
  return {phys_low >= kVpZeroShare && phys_med >= kVpZeroShare && model_low > model_high,
          "physician vp0 share low " + fmt(phys_low) + ", medium " + fmt(phys_med) + "; model vp0 low " +
              fmt(model_low) + " vs high " + fmt(model_high)};
}

Verdict figure_two() {
  const TrainedModel& m = trained_model();
  const GreedyPolicy greedy(m.result.main, m.data.scaler);
  const MortalityByDiff mort =
      mortality_by_difference(m.data.test, greedy.act_all(m.data.test), Subcohort::kMedium, SubcohortSpec{});
  std::ostringstream d;
  bool any = false;
  for (Drug drug : {Drug::kIv, Drug::kVp}) {
    const DiffBin& zero = mort.at(drug, 0);
    bool minimal = zero.timesteps > 0;
    double lowest_other = 1.0;
    for (int diff = -kMaxBinDiff; diff <= kMaxBinDiff; ++diff) {
      const DiffBin& b = mort.at(drug, diff);
      if (diff == 0 || b.timesteps == 0) continue;
      lowest_other = std::min(lowest_other, b.mortality());
      if (b.mortality() < zero.mortality()) minimal = false;
    }
    any = any || minimal;
    if (drug == Drug::kVp) d << "; ";
    d << drug_name(drug) << " diff-0 mortality " << fmt(zero.mortality()) << " (n " << zero.timesteps
      << ") vs lowest other " << fmt(lowest_other) << (minimal ? " min" : " not min");
  }
  return {any, d.str()};
}

Verdict cohort_statistics() {
  const SyntheticCohort c = generate_cohort(default_sim(), kCohortPatients);
  const double died = c.stats.died_fraction;
  std::vector<Outcome> outcomes;
  for (const auto& r : c.rows)
    if (r.outcome) outcomes.push_back(*r.outcome);
  const SplitIndices s = stratified_split(outcomes, 0.8, 1);
  double d_train = 0.0;
  for (auto i : s.train) d_train += outcomes[i] == Outcome::kDied;
  const double d_all = static_cast<double>(std::count(outcomes.begin(), outcomes.end(), Outcome::kDied));
  const double ideal = d_all * static_cast<double>(s.train.size()) / static_cast<double>(outcomes.size());
  const double off = std::abs(d_train - ideal);
  return {std::abs(died - kDiedFraction) <= kDiedTolerance && off <= 1.0 &&
              outcomes.size() == static_cast<std::size_t>(kCohortPatients),
          "died fraction " + fmt(died) + " (" + std::to_string(c.stats.died) + " of " +
              std::to_string(c.stats.patients) + "), split deaths off by " + fmt(off) + " patients"};
}

Verdict determinism() {
  const PreparedData d = prepare_dataset(generate_cohort(default_sim(), 500).rows, 0.8, 1, RewardConfig{});
  const TransitionStore store = TransitionStore::build(d.train, d.scaler);
  ToolkitConfig cfg;
  cfg.train.batches = kDeterminismBatches;
  cfg.train.eval_every = 100;
  auto once = [&](std::string& metrics, std::string& ckpt_json, Checkpoint& ckpt) {
    TrainResult r = train(store, cfg.train);
    std::ostringstream os;
    write_metrics_csv(os, r.metrics);
    metrics = os.str();
    ckpt.config = cfg;
    ckpt.scaler = d.scaler;
    ckpt.binning = d.binning;
    ckpt.main = std::move(r.main);
    ckpt.target = std::move(r.target);
    ckpt.adam = std::move(r.adam);
    ckpt.test_patient_ids = patient_ids(d.test);
    ckpt.batches_completed = r.batches_completed;
    ckpt_json = checkpoint_to_json(ckpt);
  };
  std::string m1, m2, j1, j2;
  Checkpoint c1, c2;
  once(m1, j1, c1);
  once(m2, j2, c2);
  const Checkpoint back = checkpoint_from_json(j1);
  Rng rng(99);
  Matrix x(kRoundTripStates, kNumFeatures);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Matrix qa = forward(c1.main, x, Mode::kInfer);
  const Matrix qb = forward(back.main, x, Mode::kInfer);
  const bool same_q = qa == qb;
  return {m1 == m2 && j1 == j2 && same_q && back == c1,
          std::string("metrics ") + (m1 == m2 ? "identical" : "differ") + ", checkpoint bytes " +
              (j1 == j2 ? "identical" : "differ") + ", round-trip Q on " + std::to_string(kRoundTripStates) +
              " states " + (same_q ? "identical" : "differ")};
}

}  // namespace

int main() {
  report("reward exactness", reward_exactness, 1.0);
  report("gradient correctness", gradient_correctness, 30.0);
  report("sum-tree fidelity", sum_tree_fidelity, 10.0);
  report("oracle policy recovery", oracle_recovery, 15.0 * 60.0);
  report("DR estimator soundness", dr_soundness, 5.0 * 60.0);
  report("figure-1 qualitative", figure_one);
  report("figure-2 qualitative", figure_two);
  report("cohort statistics", cohort_statistics);
  report("determinism and persistence", determinism);
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
