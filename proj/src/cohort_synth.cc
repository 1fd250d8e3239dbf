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

#include "septic_rl/cohort_synth.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <ostream>

namespace septic_rl {

namespace {

using nlohmann::json;

int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left a sliver above the cumulative sum: return the last
  // non-zero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

double forced_death(const SimMDPConfig& cfg, int s) {
  const double total = cfg.death_hazard[s] + cfg.discharge_hazard[s];
  return total > 0.0 ? cfg.death_hazard[s] / total : 0.0;
}

double continue_prob(const SimMDPConfig& cfg, int s) {
  return 1.0 - cfg.death_hazard[s] - cfg.discharge_hazard[s];
}

// Semi-realistic marginal ranges; only SOFA, lactate and timestep carry
// reward-relevant information, the rest drift with severity under noise.
std::array<FeatureEmission, kNumFeatures> default_emissions() {
  std::array<FeatureEmission, kNumFeatures> e{};
  auto cont = [](double base, double per, double psd, double nsd, double lo, double hi) {
    FeatureEmission f;
    f.base = base;
    f.per_severity = per;
    f.patient_sd = psd;
    f.noise_sd = nsd;
    f.lo = lo;
    f.hi = hi;
    return f;
  };
  auto fixed = [&](double base, double per, double psd, double lo, double hi) {
    FeatureEmission f = cont(base, per, psd, 0.0, lo, hi);
    f.per_patient = true;
    return f;
  };
  auto binary = [](double base, double per, bool per_patient) {
    FeatureEmission f;
    f.base = base;
    f.per_severity = per;
    f.binary = true;
    f.per_patient = per_patient;
    return f;
  };
  e[0] = cont(0.6, 0.05, 0.08, 0.08, 0.2, 2.5);      // shock index
  e[1] = fixed(3.0, 0.4, 2.0, 0.0, 20.0);            // elixhauser
  e[2] = cont(1.5, 0.25, 0.3, 0.5, 0.0, 4.0);        // sirs
  e[3] = binary(0.44, 0.005, true);                  // gender (1 = female)
  e[4] = binary(0.10, 0.01, true);                   // re-admission
  e[5] = cont(15.0, -1.1, 1.0, 1.0, 3.0, 15.0);      // gcs
  // e[6] sofa: deterministic in severity
  e[7] = fixed(60.0, 1.5, 14.0, 18.0, 95.0);         // age
  e[8] = cont(3.2, -0.1, 0.3, 0.2, 1.0, 5.5);        // albumin
  e[9] = cont(7.42, -0.012, 0.02, 0.02, 6.8, 7.7);   // arterial ph
  e[10] = cont(8.4, -0.05, 0.3, 0.3, 5.0, 12.0);     // calcium
  e[11] = cont(130.0, 5.0, 20.0, 25.0, 40.0, 500.0); // glucose
  e[12] = cont(10.5, -0.2, 1.0, 0.6, 4.0, 18.0);     // hemoglobin
  e[13] = cont(2.0, 0.0, 0.15, 0.15, 0.8, 4.0);      // magnesium
  e[14] = cont(32.0, 2.0, 4.0, 4.0, 18.0, 150.0);    // ptt
  e[15] = cont(4.0, 0.05, 0.3, 0.3, 2.0, 7.5);       // potassium
  e[16] = cont(40.0, 10.0, 20.0, 15.0, 5.0, 2000.0); // sgpt
  e[17] = cont(0.0, -0.8, 2.0, 1.5, -25.0, 15.0);    // arterial blood gas (base excess)
  e[18] = cont(20.0, 4.0, 8.0, 4.0, 2.0, 180.0);     // bun
  e[19] = cont(104.0, 0.3, 3.0, 2.0, 80.0, 130.0);   // chloride
  e[20] = cont(24.0, -0.8, 2.0, 1.5, 5.0, 45.0);     // bicarbonate
  e[21] = cont(1.2, 0.08, 0.15, 0.1, 0.8, 8.0);      // inr
  e[22] = cont(139.0, 0.0, 3.0, 2.0, 115.0, 165.0);  // sodium
  // e[23] lactate: deterministic in severity plus patient offset
  e[24] = cont(25.0, -0.7, 2.0, 1.5, 5.0, 45.0);     // co2
  e[25] = cont(1.0, 0.2, 0.3, 0.15, 0.2, 12.0);      // creatinine
  e[26] = cont(1.12, -0.01, 0.05, 0.04, 0.6, 1.6);   // ionised calcium
  e[27] = cont(14.0, 0.8, 1.5, 1.0, 9.0, 60.0);      // pt
  e[28] = cont(230.0, -15.0, 60.0, 20.0, 5.0, 900.0);  // platelets
  e[29] = cont(50.0, 12.0, 25.0, 20.0, 5.0, 3000.0);   // sgot
  e[30] = cont(0.9, 0.25, 0.4, 0.2, 0.1, 30.0);        // bilirubin
  e[31] = cont(11.0, 0.6, 3.0, 2.0, 0.5, 60.0);        // wbc
  e[32] = cont(62.0, -1.5, 6.0, 6.0, 25.0, 120.0);     // diastolic bp
  e[33] = cont(122.0, -3.0, 10.0, 10.0, 60.0, 200.0);  // systolic bp
  e[34] = cont(80.0, -2.0, 7.0, 6.0, 35.0, 140.0);     // mean bp
  e[35] = cont(40.0, 0.5, 4.0, 4.0, 15.0, 90.0);       // paco2
  e[36] = cont(110.0, -5.0, 20.0, 20.0, 40.0, 500.0);  // pao2
  e[37] = cont(0.35, 0.04, 0.05, 0.05, 0.21, 1.0);     // fio2
  e[38] = cont(320.0, -22.0, 50.0, 40.0, 50.0, 700.0); // pao2/fio2
  e[39] = cont(18.0, 1.0, 3.0, 3.0, 6.0, 45.0);        // respiratory rate
  e[40] = cont(37.0, 0.1, 0.3, 0.4, 34.0, 41.0);       // temperature
  e[41] = fixed(80.0, 0.0, 18.0, 35.0, 200.0);         // weight
  e[42] = cont(88.0, 3.0, 10.0, 8.0, 40.0, 180.0);     // heart rate
  e[43] = cont(97.0, -0.4, 1.0, 1.0, 75.0, 100.0);     // spo2
  e[44] = cont(500.0, -40.0, 150.0, 150.0, 0.0, 3000.0);     // fluid output 4h
  e[45] = cont(2000.0, 200.0, 800.0, 300.0, 0.0, 30000.0);   // total fluid output
  e[46] = binary(0.10, 0.10, false);                   // mechanical ventilation
  // e[47] timestep
  return e;
}

std::vector<ActionDistribution> build_clinician(const SimMDPConfig& cfg, const SimParams& p,
                                                const std::array<double, 5>& m_iv,
                                                const std::array<double, 5>& m_vp) {
  std::vector<ActionDistribution> pi(static_cast<std::size_t>(cfg.n_severity));
  for (int s = 0; s < cfg.n_severity; ++s) {
    ActionDistribution w{};
    double total = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
      const Action act = Action::from_flat(a);
      w[a] = std::exp(-p.clinician_iv_temperature * std::abs(act.iv_bin - cfg.ideal_iv[s]) -
                      p.clinician_vp_temperature * std::abs(act.vp_bin - cfg.ideal_vp[s])) *
             m_iv[act.iv_bin] * m_vp[act.vp_bin];
      total += w[a];
    }
    for (int a = 0; a < kNumActions; ++a)
      pi[s][a] = (1.0 - p.clinician_uniform_mix) * w[a] / total +
                 p.clinician_uniform_mix / kNumActions;
  }
  return pi;
}

}  // namespace

void SimMDPConfig::validate() const {
  const auto n = static_cast<std::size_t>(n_severity);
  if (n_severity < 1) throw ValidationError("simulator needs at least one severity level");
  if (max_horizon < 1) throw ValidationError("sim.max_horizon must be >= 1");
  if (transition.size() != n * kNumActions * n || clinician.size() != n || initial.size() != n ||
      death_hazard.size() != n || discharge_hazard.size() != n || sofa.size() != n ||
      lactate.size() != n)
    throw ValidationError("simulator tables have inconsistent sizes");
  for (int s = 0; s < n_severity; ++s) {
    for (int a = 0; a < kNumActions; ++a) {
      double row = 0.0;
      for (int s2 = 0; s2 < n_severity; ++s2) {
        const double v = p(s, a, s2);
        if (!(v >= 0.0)) throw ValidationError("negative transition probability");
        row += v;
      }
      if (std::abs(row - 1.0) > 1e-9)
        throw ValidationError("transition row (severity " + std::to_string(s) + ", action " +
                              std::to_string(a) + ") sums to " + format_double(row));
    }
    const double pol = std::accumulate(clinician[s].begin(), clinician[s].end(), 0.0);
    if (std::abs(pol - 1.0) > 1e-9) throw ValidationError("clinician policy row does not sum to 1");
    if (death_hazard[s] < 0.0 || discharge_hazard[s] < 0.0 ||
        death_hazard[s] + discharge_hazard[s] > 1.0 + 1e-12)
      throw ValidationError("hazards must be non-negative with sum at most 1");
    if (s > 0) {
      if (death_hazard[s] < death_hazard[s - 1])
        throw ValidationError("death hazard must be non-decreasing in severity");
      if (discharge_hazard[s] > discharge_hazard[s - 1])
        throw ValidationError("discharge hazard must be non-increasing in severity");
      if (!(sofa[s] > sofa[s - 1])) throw ValidationError("SOFA must increase with severity");
    }
  }
  const double init = std::accumulate(initial.begin(), initial.end(), 0.0);
  if (std::abs(init - 1.0) > 1e-9) throw ValidationError("initial distribution does not sum to 1");
}

int SimMDPConfig::mismatch(int s, int a) const {
  const Action act = Action::from_flat(a);
  return std::abs(act.iv_bin - ideal_iv[s]) + std::abs(act.vp_bin - ideal_vp[s]);
}

double latent_reward(const SimMDPConfig& cfg, int s, int a, int s_next) {
  StateVector x, y;
  x.sofa() = cfg.sofa[s];
  x.lactate() = cfg.lactate[s];
  y.sofa() = cfg.sofa[s_next];
  y.lactate() = cfg.lactate[s_next] + cfg.lactate_rise * cfg.mismatch(s, a);
  return reward_intermediate(x, y, cfg.reward);
}

OccupancySummary occupancy(const SimMDPConfig& cfg,
                           const std::vector<ActionDistribution>& policy) {
  const int n = cfg.n_severity;
  OccupancySummary out;
  out.visits.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> d = cfg.initial, next(static_cast<std::size_t>(n));
  for (int t = 0; t < cfg.max_horizon; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < n; ++s) {
      if (d[s] == 0.0) continue;
      out.visits[s] += d[s];
      for (int a = 0; a < kNumActions; ++a) {
        const double w = d[s] * policy[s][a];
        if (w == 0.0) continue;
        out.action_counts[a] += w;
        for (int s2 = 0; s2 < n; ++s2) {
          const double m = w * cfg.p(s, a, s2);
          out.death_probability += m * cfg.death_hazard[s2];
          const double cont = m * continue_prob(cfg, s2);
          if (t + 1 == cfg.max_horizon) {
            out.death_probability += cont * forced_death(cfg, s2);
          } else {
            next[s2] += cont;
          }
        }
      }
    }
    std::swap(d, next);
  }
  out.mean_length = std::accumulate(out.visits.begin(), out.visits.end(), 0.0);
  return out;
}

SimMDPConfig build_sim_config(const SimParams& p, const RewardConfig& reward) {
  const int n = p.n_severity_levels;
  if (n < 2) throw ValidationError("sim.n_severity_levels must be >= 2");
  if (p.max_horizon < 1) throw ValidationError("sim.max_horizon must be >= 1");
  if (!(p.clinician_uniform_mix >= 0.0 && p.clinician_uniform_mix <= 1.0))
    throw ValidationError("sim.clinician_uniform_mix must lie in [0,1]");
  SimMDPConfig cfg;
  cfg.n_severity = n;
  cfg.max_horizon = p.max_horizon;
  cfg.seed = p.seed;
  cfg.reward = reward;
  if (!(p.lactate_rise_per_mismatch >= 0.0))
    throw ValidationError("sim.lactate_rise_per_mismatch must be non-negative");
  cfg.lactate_rise = p.lactate_rise_per_mismatch;
  cfg.emission = default_emissions();
  const auto un = static_cast<std::size_t>(n);
  cfg.sofa.resize(un);
  cfg.lactate.resize(un);
  cfg.ideal_iv.resize(un);
  cfg.ideal_vp.resize(un);
  cfg.death_hazard.resize(un);
  cfg.discharge_hazard.resize(un);
  std::vector<double> death_shape(un);
  for (int s = 0; s < n; ++s) {
    const double x = static_cast<double>(s) / static_cast<double>(n - 1);
    cfg.sofa[s] = std::round(1.0 + 18.0 * x);
    const double sd = static_cast<double>(s) * 7.0 / static_cast<double>(n - 1);
    cfg.lactate[s] = p.lactate_base + p.lactate_linear * sd + p.lactate_quadratic * sd * sd;
    cfg.ideal_iv[s] = std::min(4, 1 + (s * 4) / n);
    cfg.ideal_vp[s] = std::max(0, s - (n - 4));
    cfg.discharge_hazard[s] = p.discharge_base * std::pow(1.0 - x, p.discharge_exponent) + p.discharge_floor;
    death_shape[s] = p.death_base * std::pow(x, p.death_exponent);
  }
  // Initial severity: mass concentrated on mild and moderate presentations.
  cfg.initial.resize(un);
  for (int s = 0; s < n; ++s) {
    const double x = static_cast<double>(s) / static_cast<double>(n - 1);
    cfg.initial[s] = std::exp(-0.5 * std::pow((x - p.initial_center) / p.initial_width, 2.0));
  }
  const double init_total = std::accumulate(cfg.initial.begin(), cfg.initial.end(), 0.0);
  for (auto& v : cfg.initial) v /= init_total;

  cfg.transition.assign(un * kNumActions * un, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < kNumActions; ++a) {
      const double mismatch = cfg.mismatch(s, a);
      double down = p.improve_base * std::exp(-p.improve_decay * mismatch);
      double up = p.worsen_max - (p.worsen_max - p.worsen_base) * std::exp(-p.worsen_rate * mismatch);
      if (s == 0) down = 0.0;
      if (s == n - 1) up = 0.0;
      const std::size_t base = (static_cast<std::size_t>(s) * kNumActions + a) * un;
      cfg.transition[base + s] = 1.0 - down - up;
      if (s > 0) cfg.transition[base + s - 1] = down;
      if (s < n - 1) cfg.transition[base + s + 1] = up;
    }
  }

  std::array<double, 5> m_iv{1, 1, 1, 1, 1}, m_vp{1, 1, 1, 1, 1};
  auto set_death_scale = [&](double scale) {
    for (int s = 0; s < n; ++s) cfg.death_hazard[s] = scale * death_shape[s];
  };
  double scale = p.death_hazard_scale;
  set_death_scale(scale);
  cfg.clinician = build_clinician(cfg, p, m_iv, m_vp);

  const bool calibrate_death = p.target_death_fraction >= 0.0;
  const int outer = (calibrate_death || p.equalize_dose_bins) ? 12 : 0;
  for (int round = 0; round < outer; ++round) {
    if (p.equalize_dose_bins) {
      // Iterative proportional fitting of per-bin dose preferences so that
      // the four non-zero bins of each drug are equally frequent overall.
      for (int it = 0; it < 400; ++it) {
        const OccupancySummary occ = occupancy(cfg, cfg.clinician);
        std::array<double, 5> f_iv{}, f_vp{};
        for (int a = 0; a < kNumActions; ++a) {
          const Action act = Action::from_flat(a);
          f_iv[act.iv_bin] += occ.action_counts[a];
          f_vp[act.vp_bin] += occ.action_counts[a];
        }
        const double t_iv = (f_iv[1] + f_iv[2] + f_iv[3] + f_iv[4]) / 4.0;
        const double t_vp = (f_vp[1] + f_vp[2] + f_vp[3] + f_vp[4]) / 4.0;
        double worst = 0.0;
        for (int k = 1; k < 5; ++k) {
          worst = std::max({worst, std::abs(f_iv[k] / t_iv - 1.0), std::abs(f_vp[k] / t_vp - 1.0)});
          m_iv[k] *= std::pow(t_iv / f_iv[k], 0.7);
          m_vp[k] *= std::pow(t_vp / f_vp[k], 0.7);
        }
        cfg.clinician = build_clinician(cfg, p, m_iv, m_vp);
        if (worst < 1e-12) break;
      }
    }
    if (calibrate_death) {
      double hi = 1e300;
      for (int s = 0; s < n; ++s)
        if (death_shape[s] > 0.0)
          hi = std::min(hi, (1.0 - cfg.discharge_hazard[s]) / death_shape[s]);
      double lo = 0.0;
      set_death_scale(0.0);
      if (occupancy(cfg, cfg.clinician).death_probability > p.target_death_fraction)
        throw ValidationError("sim.target_death_fraction is below the death rate of horizon closures");
      set_death_scale(hi);
      if (occupancy(cfg, cfg.clinician).death_probability < p.target_death_fraction)
        throw ValidationError("sim.target_death_fraction is not reachable");
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        set_death_scale(mid);
        (occupancy(cfg, cfg.clinician).death_probability < p.target_death_fraction ? lo : hi) = mid;
      }
      scale = 0.5 * (lo + hi);
      set_death_scale(scale);
    }
  }
  cfg.validate();
  return cfg;
}

PatientProfile sample_profile(const SimMDPConfig& cfg, int initial_severity, Rng& rng) {
  PatientProfile prof;
  for (int f = 0; f < kNumFeatures; ++f) {
    const FeatureEmission& e = cfg.emission[f];
    if (e.binary) {
      if (e.per_patient) {
        const double p = std::clamp(e.base + e.per_severity * initial_severity, 0.0, 1.0);
        prof.fixed[f] = rng.bernoulli(p) ? 1.0 : 0.0;
      }
    } else if (e.per_patient) {
      prof.fixed[f] =
          std::clamp(e.base + e.per_severity * initial_severity + e.patient_sd * rng.normal(),
                     e.lo, e.hi);
    } else {
      prof.offset[f] = e.patient_sd * rng.normal();
    }
  }
  prof.offset[features::kArterialLactate] =
      std::clamp(cfg.lactate_patient_sd * rng.normal(), -0.4, 0.4);
  return prof;
}

StateVector emit_state(const SimMDPConfig& cfg, const PatientProfile& prof, int s, int t,
                       double lactate_debt, Rng& rng) {
  StateVector x;
  for (int f = 0; f < kNumFeatures; ++f) {
    const FeatureEmission& e = cfg.emission[f];
    if (f == features::kSofa || f == features::kArterialLactate || f == features::kTimestep)
      continue;
    if (e.per_patient) {
      x[f] = prof.fixed[f];
    } else if (e.binary) {
      x[f] = rng.bernoulli(std::clamp(e.base + e.per_severity * s, 0.0, 1.0)) ? 1.0 : 0.0;
    } else {
      x[f] = std::clamp(e.base + e.per_severity * s + prof.offset[f] + e.noise_sd * rng.normal(),
                        e.lo, e.hi);
    }
  }
  x.sofa() = cfg.sofa[s];
  x.lactate() = cfg.lactate[s] + prof.offset[features::kArterialLactate] + lactate_debt;
  x[features::kTimestep] = static_cast<double>(t);
  return x;
}

int classify_severity(const SimMDPConfig& cfg, const StateVector& raw) {
  int best = 0;
  for (int s = 1; s < cfg.n_severity; ++s)
    if (std::abs(raw.sofa() - cfg.sofa[s]) < std::abs(raw.sofa() - cfg.sofa[best])) best = s;
  return best;
}

namespace {

struct Episode {
  std::vector<RawRecord> rows;
  std::vector<int> severity;
  std::vector<int> action;
  std::vector<double> reward;
};

double sample_dose(const std::array<double, 5>& edges, int bin, Rng& rng) {
  if (bin == 0) return 0.0;
  // Uniform on (lo, hi]; 1 - u lies in (0, 1].
  return edges[bin] - (edges[bin] - edges[bin - 1]) * rng.uniform();
}

std::string patient_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%07zu", i + 1);
  return buf;
}

Episode simulate_patient(const SimMDPConfig& cfg, std::size_t index, Rng rng) {
  Episode ep;
  int s = sample_categorical(cfg.initial, rng);
  const PatientProfile prof = sample_profile(cfg, s, rng);
  const std::string id = patient_name(index);
  const auto n = static_cast<std::size_t>(cfg.n_severity);
  std::vector<double> row_probs(n);
  double debt = 0.0;
  for (int t = 0; t < cfg.max_horizon; ++t) {
    RawRecord r;
    r.patient_id = id;
    r.t = t;
    r.features = emit_state(cfg, prof, s, t, debt, rng);
    const int a = sample_categorical(cfg.clinician[s], rng);
    debt += cfg.lactate_rise * cfg.mismatch(s, a);
    const Action act = Action::from_flat(a);
    r.iv_dose = sample_dose(cfg.iv_edges, act.iv_bin, rng);
    r.vp_dose = sample_dose(cfg.vp_edges, act.vp_bin, rng);
    for (int s2 = 0; s2 < cfg.n_severity; ++s2) row_probs[s2] = cfg.p(s, a, s2);
    const int s_next = sample_categorical(row_probs, rng);
    const double u = rng.uniform();
    std::optional<Outcome> outcome;
    if (u < cfg.death_hazard[s_next]) {
      outcome = Outcome::kDied;
    } else if (u < cfg.death_hazard[s_next] + cfg.discharge_hazard[s_next]) {
      outcome = Outcome::kSurvived;
    } else if (t + 1 == cfg.max_horizon) {
      outcome = rng.bernoulli(forced_death(cfg, s_next)) ? Outcome::kDied : Outcome::kSurvived;
    }
    r.outcome = outcome;
    ep.rows.push_back(std::move(r));
    ep.severity.push_back(s);
    ep.action.push_back(a);
    ep.reward.push_back(0.0);
    if (outcome) {
      ep.reward.back() = reward_terminal(*outcome, cfg.reward);
      break;
    }
    s = s_next;
  }
  for (std::size_t i = 0; i + 1 < ep.rows.size(); ++i)
    ep.reward[i] = reward_intermediate(ep.rows[i].features, ep.rows[i + 1].features, cfg.reward);
  return ep;
}

}  // namespace

SyntheticCohort generate_cohort(const SimMDPConfig& cfg, std::size_t n_patients) {
  cfg.validate();
  std::vector<Episode> episodes(n_patients);
  const Rng base(cfg.seed);
  parallel_for(n_patients, [&](std::size_t i) {
    episodes[i] = simulate_patient(cfg, i, base.fork(i));
  });

  SyntheticCohort c;
  CohortStats& st = c.stats;
  st.patients = n_patients;
  std::size_t surv = 0;
  double total_rows = 0.0;
  for (auto& ep : episodes) {
    const bool died = ep.rows.back().outcome == Outcome::kDied;
    const double female = ep.rows.front().features[features::index_of("gender")];
    const double age = ep.rows.front().features[features::index_of("age")];
    const double hours = 4.0 * static_cast<double>(ep.rows.size());
    total_rows += static_cast<double>(ep.rows.size());
    if (died) {
      ++st.died;
      st.female_nonsurvivors += female;
      st.mean_age_nonsurvivors += age;
      st.mean_hours_nonsurvivors += hours;
    } else {
      ++surv;
      st.female_survivors += female;
      st.mean_age_survivors += age;
      st.mean_hours_survivors += hours;
    }
    for (std::size_t i = 0; i < ep.rows.size(); ++i) {
      c.rows.push_back(std::move(ep.rows[i]));
      c.severity.push_back(ep.severity[i]);
      c.clinician_action.push_back(ep.action[i]);
      c.reward.push_back(ep.reward[i]);
    }
  }
  auto safe_div = [](double a, std::size_t b) { return b ? a / static_cast<double>(b) : 0.0; };
  st.died_fraction = safe_div(static_cast<double>(st.died), n_patients);
  st.female_survivors = safe_div(st.female_survivors, surv);
  st.female_nonsurvivors = safe_div(st.female_nonsurvivors, st.died);
  st.mean_age_survivors = safe_div(st.mean_age_survivors, surv);
  st.mean_age_nonsurvivors = safe_div(st.mean_age_nonsurvivors, st.died);
  st.mean_hours_survivors = safe_div(st.mean_hours_survivors, surv);
  st.mean_hours_nonsurvivors = safe_div(st.mean_hours_nonsurvivors, st.died);
  st.mean_length = safe_div(total_rows, n_patients);
  return c;
}

void write_cohort_stats_json(std::ostream& out, const CohortStats& s) {
  json j = {{"patients", s.patients},
            {"died", s.died},
            {"died_fraction", s.died_fraction},
            {"percent_female_survivors", 100.0 * s.female_survivors},
            {"percent_female_nonsurvivors", 100.0 * s.female_nonsurvivors},
            {"mean_age_survivors", s.mean_age_survivors},
            {"mean_age_nonsurvivors", s.mean_age_nonsurvivors},
            {"mean_hours_survivors", s.mean_hours_survivors},
            {"mean_hours_nonsurvivors", s.mean_hours_nonsurvivors},
            {"mean_episode_length", s.mean_length}};
  out << j.dump(2) << '\n';
}

std::vector<ActionDistribution> deterministic_policy(const std::vector<int>& actions) {
  std::vector<ActionDistribution> pi(actions.size());
  for (std::size_t s = 0; s < actions.size(); ++s) {
    pi[s].fill(0.0);
    pi[s][actions[s]] = 1.0;
  }
  return pi;
}

namespace {

// Expected one-step return of (s, a) given values of the continuing states.
double backup(const SimMDPConfig& cfg, int s, int a, double gamma,
              const std::vector<double>& v_next) {
  const double big = cfg.reward.terminal_magnitude;
  double q = 0.0;
  for (int s2 = 0; s2 < cfg.n_severity; ++s2) {
    const double pr = cfg.p(s, a, s2);
    if (pr == 0.0) continue;
    q += pr * (-big * cfg.death_hazard[s2] + big * cfg.discharge_hazard[s2] +
               continue_prob(cfg, s2) * (latent_reward(cfg, s, a, s2) + gamma * v_next[s2]));
  }
  return q;
}

}  // namespace

std::vector<double> evaluate_policy(const SimMDPConfig& cfg,
                                    const std::vector<ActionDistribution>& policy, double gamma) {
  const int n = cfg.n_severity;
  const double big = cfg.reward.terminal_magnitude;
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    for (int act = 0; act < kNumActions; ++act) {
      const double w = policy[s][act];
      if (w == 0.0) continue;
      for (int s2 = 0; s2 < n; ++s2) {
        const double pr = w * cfg.p(s, act, s2);
        if (pr == 0.0) continue;
        const double c = continue_prob(cfg, s2);
        b(s) += pr * (-big * cfg.death_hazard[s2] + big * cfg.discharge_hazard[s2] +
                      c * latent_reward(cfg, s, act, s2));
        a(s, s2) -= gamma * pr * c;
      }
    }
  }
  const Eigen::VectorXd v = a.fullPivLu().solve(b);
  return std::vector<double>(v.data(), v.data() + n);
}

std::vector<double> evaluate_policy_capped(const SimMDPConfig& cfg,
                                           const std::vector<ActionDistribution>& policy,
                                           double gamma) {
  const int n = cfg.n_severity;
  const double big = cfg.reward.terminal_magnitude;
  // Value of a continuing state after the final allowed step: the forced
  // outcome.
  std::vector<double> v_next(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const double fd = forced_death(cfg, s);
    v_next[s] = big * (1.0 - 2.0 * fd);
  }
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int t = cfg.max_horizon - 1; t >= 0; --t) {
    const bool last = t + 1 == cfg.max_horizon;
    for (int s = 0; s < n; ++s) {
      double val = 0.0;
      for (int a = 0; a < kNumActions; ++a) {
        const double w = policy[s][a];
        if (w == 0.0) continue;
        if (last) {
          // Forced closure: no intermediate reward and no discounting.
          double q = 0.0;
          for (int s2 = 0; s2 < n; ++s2) {
            const double pr = cfg.p(s, a, s2);
            q += pr * (-big * cfg.death_hazard[s2] + big * cfg.discharge_hazard[s2] +
                       continue_prob(cfg, s2) * v_next[s2]);
          }
          val += w * q;
        } else {
          val += w * backup(cfg, s, a, gamma, v_next);
        }
      }
      v[s] = val;
    }
    v_next = v;
  }
  return v;
}

double initial_value(const SimMDPConfig& cfg, const std::vector<double>& per_severity) {
  double v = 0.0;
  for (int s = 0; s < cfg.n_severity; ++s) v += cfg.initial[s] * per_severity[s];
  return v;
}

OracleSolution solve_oracle(const SimMDPConfig& cfg, double gamma) {
  cfg.validate();
  if (!(gamma >= 0.0) || gamma > 1.0) throw ValidationError("gamma must lie in [0,1]");
  if (gamma >= 1.0) {
    for (int s = 0; s < cfg.n_severity; ++s)
      if (cfg.death_hazard[s] + cfg.discharge_hazard[s] <= 0.0)
        throw ValidationError("gamma >= 1 requires a termination hazard in every severity");
  }
  const int n = cfg.n_severity;
  OracleSolution sol;
  sol.gamma = gamma;
  sol.q_star.assign(static_cast<std::size_t>(n), ActionDistribution{});
  sol.v_star.assign(static_cast<std::size_t>(n), 0.0);
  double residual = 1.0;
  for (long it = 0; it < 10000000 && residual >= 1e-10; ++it) {
    std::vector<double> v_new(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
      double best = -1e300;
      for (int a = 0; a < kNumActions; ++a) {
        sol.q_star[s][a] = backup(cfg, s, a, gamma, sol.v_star);
        best = std::max(best, sol.q_star[s][a]);
      }
      v_new[s] = best;
    }
    residual = 0.0;
    for (int s = 0; s < n; ++s) residual = std::max(residual, std::abs(v_new[s] - sol.v_star[s]));
    sol.v_star = v_new;
  }
  // Residual of the returned Q against its own greedy values.
  sol.bellman_residual = 0.0;
  sol.optimal_action.assign(static_cast<std::size_t>(n), 0);
  for (int s = 0; s < n; ++s) {
    int best = 0;
    for (int a = 1; a < kNumActions; ++a)
      if (sol.q_star[s][a] > sol.q_star[s][best]) best = a;
    sol.optimal_action[s] = best;
    sol.v_star[s] = sol.q_star[s][best];
  }
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < kNumActions; ++a)
      sol.bellman_residual = std::max(
          sol.bellman_residual, std::abs(sol.q_star[s][a] - backup(cfg, s, a, gamma, sol.v_star)));

  const auto opt = deterministic_policy(sol.optimal_action);
  sol.clinician_value = evaluate_policy(cfg, cfg.clinician, gamma);
  sol.optimal_value_capped = evaluate_policy_capped(cfg, opt, gamma);
  sol.clinician_value_capped = evaluate_policy_capped(cfg, cfg.clinician, gamma);
  sol.optimal_policy_value = initial_value(cfg, sol.optimal_value_capped);
  sol.clinician_policy_value = initial_value(cfg, sol.clinician_value_capped);
  return sol;
}

std::vector<ActionDistribution> policy_from_observations(
    const SimMDPConfig& cfg, std::span<const StateVector> observed,
    const std::function<int(const StateVector&)>& act, int fallback_samples,
    std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(cfg.n_severity);
  std::vector<ActionDistribution> pi(n);
  std::vector<double> count(n, 0.0);
  for (auto& row : pi) row.fill(0.0);
  for (const auto& x : observed) {
    const int s = classify_severity(cfg, x);
    pi[s][act(x)] += 1.0;
    count[s] += 1.0;
  }
  Rng rng(seed);
  for (int s = 0; s < cfg.n_severity; ++s) {
    if (count[s] == 0.0) {
      if (fallback_samples <= 0)
        throw ValidationError("no observed state for severity " + std::to_string(s));
      for (int i = 0; i < fallback_samples; ++i) {
        const PatientProfile prof = sample_profile(cfg, s, rng);
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_horizon)));
        pi[s][act(emit_state(cfg, prof, s, t, 0.0, rng))] += 1.0;
      }
      count[s] = fallback_samples;
    }
    for (auto& v : pi[s]) v /= count[s];
  }
  return pi;
}

void write_oracle_json(std::ostream& out, const SimMDPConfig& cfg, const OracleSolution& sol) {
  json j;
  j["gamma"] = sol.gamma;
  j["n_severity_levels"] = cfg.n_severity;
  j["sofa_by_severity"] = cfg.sofa;
  j["initial_distribution"] = cfg.initial;
  j["q_star"] = sol.q_star;
  j["optimal_policy"] = sol.optimal_action;
  json decoded = json::array();
  for (int a : sol.optimal_action) {
    const Action act = Action::from_flat(a);
    decoded.push_back({{"iv_bin", act.iv_bin}, {"vp_bin", act.vp_bin}});
  }
  j["optimal_policy_bins"] = decoded;
  j["v_star"] = sol.v_star;
  j["bellman_residual"] = sol.bellman_residual;
  j["clinician_value"] = sol.clinician_value;
  j["optimal_value_capped"] = sol.optimal_value_capped;
  j["clinician_value_capped"] = sol.clinician_value_capped;
  j["optimal_policy_value"] = sol.optimal_policy_value;
  j["clinician_policy_value"] = sol.clinician_policy_value;
  out << j.dump(2) << '\n';
}

}  // namespace septic_rl
