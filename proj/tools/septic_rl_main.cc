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

// septic_rl: synth | preprocess | train | evaluate | analyze.
// Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "septic_rl/analysis.h"
#include "septic_rl/checkpoint.h"
#include "septic_rl/cohort_synth.h"
#include "septic_rl/common.h"
#include "septic_rl/config.h"
#include "septic_rl/ope.h"
#include "septic_rl/pipeline.h"
#include "septic_rl/train.h"
#include "septic_rl/trajectory_csv.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace septic_rl {
namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void log(const std::string& msg) { std::cerr << "[septic_rl] " << msg << '\n'; }

// Collects what a run read and wrote, then writes it next to the outputs.
class Manifest {
 public:
  Manifest(std::string subcommand, const ToolkitConfig& cfg, std::uint64_t seed)
      : subcommand_(std::move(subcommand)), config_hash_(cfg.hash()), seed_(seed),
        started_(utc_now()) {}

  void input(const fs::path& p) { inputs_[p.string()] = file_checksum(p); }
  void output(const fs::path& p) { outputs_[p.string()] = file_checksum(p); }

  void write(const fs::path& path) const {
    json j;
    j["subcommand"] = subcommand_;
    j["toolkit_version"] = std::string(kToolkitVersion);
    j["config_hash"] = config_hash_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["started_at"] = started_;
    j["finished_at"] = utc_now();
    write_file_atomic(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
  }

 private:
  std::string subcommand_, config_hash_;
  std::uint64_t seed_;
  std::string started_;
  std::map<std::string, std::string> inputs_, outputs_;
};

fs::path sibling(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

ToolkitConfig load_config(const std::string& path) {
  return path.empty() ? ToolkitConfig{} : ToolkitConfig::load(path);
}

void write_json(const fs::path& path, const json& j) {
  write_file_atomic(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

json binning_json(const ActionBinning& b) {
  return {{"iv_thresholds", b.iv_thresholds}, {"vp_thresholds", b.vp_thresholds}};
}

// --- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string config, out, oracle_out;
  std::size_t n = 0;
};

void run_synth(const SynthArgs& a) {
  const ToolkitConfig cfg = load_config(a.config);
  const SimMDPConfig sim = build_sim_config(cfg.sim, cfg.train.reward);
  log("generating " + std::to_string(a.n) + " patients");
  const SyntheticCohort cohort = generate_cohort(sim, a.n);
  Manifest m("synth", cfg, cfg.sim.seed);
  if (!a.config.empty()) m.input(a.config);
  write_file_atomic(a.out, [&](std::ostream& out) { write_trajectory_csv(out, cohort.rows); });
  m.output(a.out);
  const fs::path stats = sibling(a.out, ".stats.json");
  write_file_atomic(stats, [&](std::ostream& out) { write_cohort_stats_json(out, cohort.stats); });
  m.output(stats);
  if (!a.oracle_out.empty()) {
    const OracleSolution sol = solve_oracle(sim, cfg.train.loss.gamma);
    write_file_atomic(a.oracle_out, [&](std::ostream& out) { write_oracle_json(out, sim, sol); });
    m.output(a.oracle_out);
  }
  m.write(sibling(a.out, ".manifest.json"));
  log("died fraction " + format_double(cohort.stats.died_fraction) + ", " +
      std::to_string(cohort.rows.size()) + " rows");
}

// --- preprocess -------------------------------------------------------------

struct PreprocessArgs {
  std::string config, data, out;
};

void report_rejections(const std::vector<Rejection>& rejected) {
  for (const auto& r : rejected) log("rejected patient " + r.patient_id + ": " + r.reason);
}

void run_preprocess(const PreprocessArgs& a) {
  const ToolkitConfig cfg = load_config(a.config);
  PreparedData d = prepare_dataset(read_trajectory_csv(a.data), cfg.train.split_fraction,
                                   cfg.train.seed, cfg.train.reward);
  report_rejections(d.rejected);
  json j;
  j["train_patients"] = d.train.size();
  j["test_patients"] = d.test.size();
  j["train_transitions"] = count_transitions(d.train);
  j["test_transitions"] = count_transitions(d.test);
  json rej = json::array();
  for (const auto& r : d.rejected) rej.push_back({{"patient_id", r.patient_id}, {"reason", r.reason}});
  j["rejected"] = rej;
  j["binning"] = binning_json(d.binning);
  j["scaler"] = {{"mean", d.scaler.mean}, {"stddev", d.scaler.stddev}};
  j["test_patient_ids"] = patient_ids(d.test);
  Manifest m("preprocess", cfg, cfg.train.seed);
  m.input(a.data);
  if (!a.config.empty()) m.input(a.config);
  write_json(a.out, j);
  m.output(a.out);
  m.write(sibling(a.out, ".manifest.json"));
  log(std::to_string(d.train.size()) + " train / " + std::to_string(d.test.size()) +
      " test patients, " + std::to_string(d.rejected.size()) + " rejected");
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, metrics;
};

void run_train(const TrainArgs& a) {
  const ToolkitConfig cfg = load_config(a.config);
  cfg.validate();
  PreparedData d = prepare_dataset(read_trajectory_csv(a.data), cfg.train.split_fraction,
                                   cfg.train.seed, cfg.train.reward);
  report_rejections(d.rejected);
  const TransitionStore store = TransitionStore::build(d.train, d.scaler);
  log("training on " + std::to_string(store.size()) + " transitions for " +
      std::to_string(cfg.train.batches) + " batches");
  TrainResult r = train(store, cfg.train);

  Checkpoint c;
  c.config = cfg;
  c.scaler = d.scaler;
  c.binning = d.binning;
  c.main = std::move(r.main);
  c.target = std::move(r.target);
  c.adam = std::move(r.adam);
  c.test_patient_ids = patient_ids(d.test);
  c.data_checksum = file_checksum(a.data);
  c.batches_completed = r.batches_completed;

  Manifest m("train", cfg, cfg.train.seed);
  m.input(a.data);
  if (!a.config.empty()) m.input(a.config);
  save_checkpoint(a.out, c);
  m.output(a.out);
  write_file_atomic(a.metrics, [&](std::ostream& out) { write_metrics_csv(out, r.metrics); });
  m.output(a.metrics);
  m.write(sibling(a.out, ".manifest.json"));
  if (!r.metrics.empty())
    log("final mean loss " + format_double(r.metrics.back().mean_loss));
}

// Test split recorded in the checkpoint, rebuilt with the checkpoint's
// binning. When none of the recorded ids occur in the data, every patient is
// used for both fitting and evaluation.
struct EvalData {
  std::vector<Trajectory> train, test;
};

EvalData load_eval_data(const Checkpoint& c, const std::string& data) {
  GroupedRecords g = group_and_validate(read_trajectory_csv(data));
  report_rejections(g.rejected);
  const std::set<std::string> ids(c.test_patient_ids.begin(), c.test_patient_ids.end());
  IdSplit split = split_by_ids(std::move(g.patients), ids);
  const RewardConfig& reward = c.config.train.reward;
  EvalData out;
  if (split.test.empty()) {
    log("warning: no recorded test patient occurs in " + data + "; using every patient");
    BuildResult all = build_trajectories(split.train, c.binning, reward);
    report_rejections(all.rejected);
    out.test = all.trajectories;
    out.train = std::move(all.trajectories);
  } else {
    BuildResult tr = build_trajectories(split.train, c.binning, reward);
    BuildResult te = build_trajectories(split.test, c.binning, reward);
    report_rejections(tr.rejected);
    report_rejections(te.rejected);
    out.train = std::move(tr.trajectories);
    out.test = std::move(te.trajectories);
    if (out.train.empty()) out.train = out.test;
  }
  if (out.test.empty()) throw ValidationError("no valid test trajectories in " + data);
  return out;
}

// --- evaluate ---------------------------------------------------------------

struct CheckpointArgs {
  std::string checkpoint, data, out;
};

void run_evaluate(const CheckpointArgs& a) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const ToolkitConfig& cfg = c.config;
  const EvalData d = load_eval_data(c, a.data);
  const double gamma = cfg.train.loss.gamma;
  const PolicyFn pi_e = greedy_policy(c.main, c.scaler);
  log("fitting behavior policy on " + std::to_string(d.train.size()) + " patients");
  const BehaviorPolicyModel pi_b = fit_behavior_policy(d.train, c.scaler, cfg.ope);
  log("fitting value model");
  const ValueModel q_hat = fit_value_model(d.train, c.scaler, pi_e, gamma, cfg.ope);
  const DREstimate dr = doubly_robust_value(d.test, pi_e, pi_b.as_policy(), q_hat.as_q(), gamma,
                                            pi_b.min_probability());
  json j;
  j["dr_mean"] = dr.mean;
  j["dr_stderr"] = dr.standard_error;
  j["behavior_value"] = behavior_value(d.test, gamma);
  j["zero_is_fraction"] = dr.zero_is_fraction;
  j["n_trajectories"] = d.test.size();
  j["config_hash"] = cfg.hash();
  j["behavior_floor"] = pi_b.floor();

  Manifest m("evaluate", cfg, cfg.ope.seed);
  m.input(a.checkpoint);
  m.input(a.data);
  write_json(a.out, j);
  m.output(a.out);
  m.write(sibling(a.out, ".manifest.json"));
  log("DR value " + format_double(dr.mean) + " +/- " + format_double(dr.standard_error));
}

// --- analyze ----------------------------------------------------------------

void run_analyze(const CheckpointArgs& a) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const EvalData d = load_eval_data(c, a.data);
  const GreedyPolicy policy(c.main, c.scaler);
  const auto actions = policy.act_all(d.test);
  const SubcohortSpec& spec = c.config.analysis;
  const HistogramSet hist = action_histograms(d.test, actions, spec);
  for (const auto& w : hist.warnings) log("warning: " + w);

  const fs::path dir = a.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory " + dir.string());
  Manifest m("analyze", c.config, c.config.train.seed);
  m.input(a.checkpoint);
  m.input(a.data);
  for (int k = 0; k < kNumSubcohorts; ++k) {
    for (const ActionHistogram2D* h : {&hist.physician[k], &hist.model[k]}) {
      const fs::path p = dir / ("hist_" + std::string(subcohort_name(h->subcohort)) + "_" +
                                std::string(source_name(h->source)) + ".csv");
      write_file_atomic(p, [&](std::ostream& out) { write_histogram_csv(out, *h); });
      m.output(p);
    }
    const auto sub = static_cast<Subcohort>(k);
    const MortalityByDiff mort = mortality_by_difference(d.test, actions, sub, spec);
    for (Drug drug : {Drug::kIv, Drug::kVp}) {
      const fs::path p = dir / ("mortality_diff_" + std::string(subcohort_name(sub)) + "_" +
                                std::string(drug_name(drug)) + ".csv");
      write_file_atomic(p, [&](std::ostream& out) { write_mortality_csv(out, mort, drug); });
      m.output(p);
    }
  }
  m.write(dir / "manifest.json");
  log("wrote analysis tables to " + dir.string());
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Offline RL toolkit for septic-shock IV fluid and vasopressor dosing",
               "septic_rl"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);
  app.footer("Config files hold `key = value` lines. Keys and defaults:\n\n" +
             ToolkitConfig{}.dump());

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cohort CSV");
  s->add_option("--config", synth.config, "Config file")->check(CLI::ExistingFile);
  s->add_option("--n", synth.n, "Number of patients")->required()->check(CLI::PositiveNumber);
  s->add_option("--out", synth.out, "Output trajectory CSV")->required();
  s->add_option("--oracle-out", synth.oracle_out, "Output oracle JSON");

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Validate a CSV and fit action binning and scaler");
  p->add_option("--data", pre.data, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  p->add_option("--config", pre.config, "Config file")->check(CLI::ExistingFile);
  p->add_option("--out", pre.out, "Output JSON report")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the Dueling Double-DQN");
  t->add_option("--data", tr.data, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  t->add_option("--config", tr.config, "Config file")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--metrics", tr.metrics, "Output metrics CSV")->required();

  CheckpointArgs ev;
  auto* e = app.add_subcommand("evaluate", "Doubly robust value of the greedy policy");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Output JSON")->required();

  CheckpointArgs an;
  auto* z = app.add_subcommand("analyze", "Action histograms and mortality by dose difference");
  z->add_option("--checkpoint", an.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  z->add_option("--data", an.data, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  z->add_option("--out-dir", an.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) {
      app.exit(err);
      return 0;
    }
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*s) run_synth(synth);
    else if (*p) run_preprocess(pre);
    else if (*t) run_train(tr);
    else if (*e) run_evaluate(ev);
    else if (*z) run_analyze(an);
    return 0;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const RuntimeFailure& err) {
    std::cerr << "runtime failure: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "runtime failure: " << err.what() << '\n';
    return 2;
  }
}

}  // namespace
}  // namespace septic_rl

int main(int argc, char** argv) { return septic_rl::dispatch(argc, argv); }
