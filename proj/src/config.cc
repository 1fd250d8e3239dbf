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

#include "septic_rl/config.h"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "septic_rl/common.h"

namespace septic_rl {

namespace {

// Calls f(key, field) for every configurable field, in canonical order.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  auto& t = c.train;
  f("train.batches", t.batches);
  f("train.batch_size", t.batch_size);
  f("train.split_fraction", t.split_fraction);
  f("train.seed", t.seed);
  f("train.eval_every", t.eval_every);
  f("train.target_sync", t.target_sync);
  f("train.probe_size", t.probe_size);
  f("network.hidden", t.network.hidden);
  f("network.bn_momentum", t.network.bn_momentum);
  f("network.bn_epsilon", t.network.bn_epsilon);
  f("adam.learning_rate", t.adam.learning_rate);
  f("adam.beta1", t.adam.beta1);
  f("adam.beta2", t.adam.beta2);
  f("adam.epsilon", t.adam.epsilon);
  f("loss.q_thresh", t.loss.q_thresh);
  f("loss.lambda_reg", t.loss.lambda_reg);
  f("loss.gamma", t.loss.gamma);
  f("loss.target_clip", t.loss.target_clip);
  f("replay.alpha", t.replay.alpha);
  f("replay.beta", t.replay.beta);
  f("replay.beta_final", t.replay.beta_final);
  f("replay.epsilon_priority", t.replay.epsilon_priority);
  f("replay.capacity", t.replay.capacity);
  f("reward.c0", t.reward.c0);
  f("reward.c1", t.reward.c1);
  f("reward.c2", t.reward.c2);
  f("reward.terminal_magnitude", t.reward.terminal_magnitude);

  auto& o = c.ope;
  f("ope.behavior_floor", o.behavior_floor);
  f("ope.bc_steps", o.bc_steps);
  f("ope.bc_batch_size", o.bc_batch_size);
  f("ope.bc_learning_rate", o.bc_learning_rate);
  f("ope.bc_validation_fraction", o.bc_validation_fraction);
  f("ope.bc_eval_every", o.bc_eval_every);
  f("ope.fqe_iterations", o.fqe_iterations);
  f("ope.fqe_steps_per_iteration", o.fqe_steps_per_iteration);
  f("ope.fqe_batch_size", o.fqe_batch_size);
  f("ope.fqe_learning_rate", o.fqe_learning_rate);
  f("ope.seed", o.seed);
  f("ope.hidden", o.network.hidden);

  f("analysis.medium_min", c.analysis.medium_min);
  f("analysis.medium_max", c.analysis.medium_max);

  auto& s = c.sim;
  f("sim.seed", s.seed);
  f("sim.n_severity_levels", s.n_severity_levels);
  f("sim.max_horizon", s.max_horizon);
  f("sim.target_death_fraction", s.target_death_fraction);
  f("sim.death_hazard_scale", s.death_hazard_scale);
  f("sim.equalize_dose_bins", s.equalize_dose_bins);
  f("sim.improve_base", s.improve_base);
  f("sim.improve_decay", s.improve_decay);
  f("sim.worsen_base", s.worsen_base);
  f("sim.worsen_max", s.worsen_max);
  f("sim.worsen_rate", s.worsen_rate);
  f("sim.discharge_base", s.discharge_base);
  f("sim.discharge_exponent", s.discharge_exponent);
  f("sim.discharge_floor", s.discharge_floor);
  f("sim.death_base", s.death_base);
  f("sim.death_exponent", s.death_exponent);
  f("sim.lactate_base", s.lactate_base);
  f("sim.lactate_linear", s.lactate_linear);
  f("sim.lactate_quadratic", s.lactate_quadratic);
  f("sim.lactate_rise_per_mismatch", s.lactate_rise_per_mismatch);
  f("sim.initial_center", s.initial_center);
  f("sim.initial_width", s.initial_width);
  f("sim.clinician_iv_temperature", s.clinician_iv_temperature);
  f("sim.clinician_vp_temperature", s.clinician_vp_temperature);
  f("sim.clinician_uniform_mix", s.clinician_uniform_mix);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
void parse_value(std::string_view key, std::string_view text, T& out) {
  const auto fail = [&] {
    throw ValidationError("invalid value '" + std::string(text) + "' for key " + std::string(key));
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") out = true;
    else if (text == "false" || text == "0") out = false;
    else fail();
  } else {
    if (text.empty()) fail();
    if constexpr (std::is_unsigned_v<T>)
      if (text.front() == '-') fail();
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail();
    out = v;
  }
}

template <class T>
std::string render(const T& v) {
  if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
  else if constexpr (std::is_floating_point_v<T>) return format_double(v);
  else return std::to_string(v);
}

}  // namespace

void ToolkitConfig::set(std::string_view key, std::string_view value) {
  bool found = false;
  visit_fields(*this, [&](std::string_view k, auto& field) {
    if (k != key) return;
    parse_value(key, value, field);
    found = true;
  });
  if (!found) throw ValidationError("unknown config key " + std::string(key));
}

void ToolkitConfig::validate() const {
  train.validate();
  ope.validate();
  analysis.validate();
  if (sim.n_severity_levels < 2) throw ValidationError("sim.n_severity_levels must be >= 2");
  if (sim.max_horizon < 1) throw ValidationError("sim.max_horizon must be >= 1");
}

void ToolkitConfig::dump(std::ostream& out) const {
  visit_fields(*this,
               [&](std::string_view k, const auto& field) { out << k << " = " << render(field) << '\n'; });
}

std::string ToolkitConfig::dump() const {
  std::ostringstream os;
  dump(os);
  return os.str();
}

std::string ToolkitConfig::hash() const { return hex64(fnv1a64(dump())); }

ToolkitConfig ToolkitConfig::parse(std::istream& in, std::string_view source) {
  ToolkitConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto where = std::string(source) + ":" + std::to_string(lineno) + ": ";
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ValidationError(where + "expected key = value");
    const std::string_view key = trim(s.substr(0, eq));
    const std::string_view value = trim(s.substr(eq + 1));
    if (!seen.insert(std::string(key)).second)
      throw ValidationError(where + "duplicate key " + std::string(key));
    try {
      cfg.set(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return cfg;
}

ToolkitConfig ToolkitConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  ToolkitConfig cfg = parse(in, path.string());
  cfg.validate();
  return cfg;
}

}  // namespace septic_rl
