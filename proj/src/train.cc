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

#include "septic_rl/train.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace septic_rl {

void TrainingConfig::validate() const {
  if (batches < 0) throw ValidationError("batches must be >= 0");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ValidationError("split_fraction must lie in (0,1)");
  if (eval_every <= 0) throw ValidationError("eval_every must be positive");
  if (target_sync <= 0) throw ValidationError("target_sync must be positive");
  if (probe_size <= 1) throw ValidationError("probe_size must be at least 2");
  if (!(adam.learning_rate > 0.0)) throw ValidationError("adam.learning_rate must be positive");
  if (!(network.bn_momentum >= 0.0 && network.bn_momentum < 1.0))
    throw ValidationError("network.bn_momentum must lie in [0,1)");
  if (!(network.bn_epsilon > 0.0)) throw ValidationError("network.bn_epsilon must be positive");
  if (network.hidden < 2 || network.hidden % 2 != 0)
    throw ValidationError("network.hidden must be a positive even number");
  loss.validate();
  replay.validate(static_cast<std::size_t>(batch_size));
  reward.validate();
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

SplitIndices stratified_split(std::span<const Outcome> outcomes, double fraction,
                              std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ValidationError("split fraction must lie in (0,1)");
  std::vector<std::size_t> died, survived;
  for (std::size_t i = 0; i < outcomes.size(); ++i)
    (outcomes[i] == Outcome::kDied ? died : survived).push_back(i);
  if (died.empty() || survived.empty())
    throw ValidationError("stratified split needs at least one patient of each outcome");

  const long long n = static_cast<long long>(outcomes.size());
  const long long d = static_cast<long long>(died.size());
  const long long s = n - d;
  const long long n_train =
      std::clamp<long long>(std::llround(fraction * static_cast<double>(n)), 1, n - 1);
  const long long n_test = n - n_train;

  long long best_d = -1;
  double best_gap = 0.0, best_dev = 0.0;
  for (long long dt = 0; dt <= std::min(d, n_train); ++dt) {
    if (n_train - dt > s || d - dt > n_test) continue;
    const double gap = std::abs(static_cast<double>(dt) / static_cast<double>(n_train) -
                                static_cast<double>(d - dt) / static_cast<double>(n_test));
    const double dev = std::abs(static_cast<double>(dt) - fraction * static_cast<double>(d));
    if (best_d < 0 || gap < best_gap - 1e-12 ||
        (std::abs(gap - best_gap) <= 1e-12 && dev < best_dev - 1e-12)) {
      best_d = dt;
      best_gap = gap;
      best_dev = dev;
    }
  }

  Rng rng(seed);
  shuffle(died, rng);
  shuffle(survived, rng);
  SplitIndices out;
  for (long long i = 0; i < d; ++i) (i < best_d ? out.train : out.test).push_back(died[i]);
  for (long long i = 0; i < s; ++i)
    (i < n_train - best_d ? out.train : out.test).push_back(survived[i]);
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

TrajectorySplit stratified_split(std::span<const Trajectory> trajectories, double fraction,
                                 std::uint64_t seed) {
  std::vector<Outcome> outcomes;
  outcomes.reserve(trajectories.size());
  for (const auto& t : trajectories) outcomes.push_back(t.outcome);
  const SplitIndices idx = stratified_split(outcomes, fraction, seed);
  TrajectorySplit out;
  for (auto i : idx.train) out.train.push_back(trajectories[i]);
  for (auto i : idx.test) out.test.push_back(trajectories[i]);
  return out;
}

TransitionStore TransitionStore::build(std::span<const Trajectory> trajectories,
                                       const FeatureScaler& scaler) {
  TransitionStore st;
  const auto n = static_cast<Eigen::Index>(count_transitions(trajectories));
  st.states.resize(n, kNumFeatures);
  st.next_states.resize(n, kNumFeatures);
  st.rewards.resize(n);
  st.actions.reserve(static_cast<std::size_t>(n));
  st.terminal.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (const auto& traj : trajectories) {
    for (const auto& tr : traj.transitions) {
      const StateVector s = scaler.transform(tr.state);
      const StateVector s2 = scaler.transform(tr.next_state);
      for (int f = 0; f < kNumFeatures; ++f) {
        st.states(row, f) = s[f];
        st.next_states(row, f) = s2[f];
      }
      st.rewards(row) = tr.reward;
      st.actions.push_back(tr.action.flat_index());
      st.terminal.push_back(tr.terminal);
      ++row;
    }
  }
  return st;
}

Matrix TransitionStore::gather_states(std::span<const std::size_t> rows) const {
  Matrix m(static_cast<Eigen::Index>(rows.size()), states.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = states.row(static_cast<Eigen::Index>(rows[i]));
  return m;
}

Matrix TransitionStore::gather_next_states(std::span<const std::size_t> rows) const {
  Matrix m(static_cast<Eigen::Index>(rows.size()), next_states.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = next_states.row(static_cast<Eigen::Index>(rows[i]));
  return m;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << "batch,mean_loss,mean_abs_td,probe_mean_max_q\n";
  for (const auto& r : rows) {
    out << r.batch << ',' << format_double(r.mean_loss) << ',' << format_double(r.mean_abs_td)
        << ',' << format_double(r.probe_mean_max_q) << '\n';
  }
}

TrainResult initial_training_state(const TrainingConfig& cfg) {
  Rng rng = Rng(cfg.seed).fork(1);
  TrainResult r;
  r.main = NetworkParams::initialize(cfg.network, rng);
  r.target = r.main;
  r.adam = AdamState::for_params(r.main);
  return r;
}

TrainResult train(const TransitionStore& store, const TrainingConfig& cfg) {
  cfg.validate();
  TrainResult r = initial_training_state(cfg);
  if (cfg.batches == 0) return r;
  if (store.size() < static_cast<std::size_t>(cfg.batch_size))
    throw ValidationError("training set has " + std::to_string(store.size()) +
                          " transitions, fewer than batch_size " +
                          std::to_string(cfg.batch_size));

  ReplayConfig rc = cfg.replay;
  if (rc.capacity == 0) rc.capacity = store.size();
  PrioritizedReplay replay(rc);
  for (std::size_t i = 0; i < store.size(); ++i) replay.insert_max_priority(i);
  if (replay.size() < static_cast<std::size_t>(cfg.batch_size))
    throw ValidationError("replay underfilled");

  const std::size_t probe_n =
      std::max<std::size_t>(2, std::min<std::size_t>(cfg.probe_size, store.size()));
  const Matrix probe = store.states.topRows(static_cast<Eigen::Index>(probe_n));

  Rng rng = Rng(cfg.seed).fork(2);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> rows(bs);
  std::vector<int> actions(bs);
  Vector rewards(cfg.batch_size), weights(cfg.batch_size);
  std::vector<bool> terminal(bs);

  double interval_loss = 0.0, interval_td = 0.0;
  long long interval_n = 0;
  for (long long b = 0; b < cfg.batches; ++b) {
    const double progress =
        cfg.batches > 1 ? static_cast<double>(b) / static_cast<double>(cfg.batches - 1) : 1.0;
    const double beta = rc.beta + (rc.beta_final - rc.beta) * progress;
    const auto batch = replay.sample(bs, beta, rng);
    for (std::size_t i = 0; i < bs; ++i) {
      rows[i] = batch[i].transition;
      actions[i] = store.actions[rows[i]];
      rewards(static_cast<Eigen::Index>(i)) = store.rewards(static_cast<Eigen::Index>(rows[i]));
      terminal[i] = store.terminal[rows[i]];
      weights(static_cast<Eigen::Index>(i)) = batch[i].weight;
    }
    const Vector targets = double_q_target(r.main, r.target, store.gather_next_states(rows),
                                           rewards, terminal, cfg.loss);
    LossResult lr = loss_and_gradients(r.main, store.gather_states(rows), actions, targets,
                                       weights, cfg.loss);
    if (!std::isfinite(lr.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at batch " << b << "; transition ids:";
      for (auto id : rows) msg << ' ' << id;
      throw RuntimeFailure(msg.str());
    }
    apply_batch_statistics(r.main, lr.cache);
    adam_step(r.main, lr.gradients, r.adam, cfg.adam);
    for (std::size_t i = 0; i < bs; ++i)
      replay.update_priority(batch[i].slot, lr.td_errors(static_cast<Eigen::Index>(i)));

    interval_loss += lr.loss;
    interval_td += lr.td_errors.cwiseAbs().mean();
    ++interval_n;
    if ((b + 1) % cfg.target_sync == 0) sync_target(r.main, r.target);
    if ((b + 1) % cfg.eval_every == 0 || b + 1 == cfg.batches) {
      const Matrix q = forward(r.main, probe, Mode::kInfer);
      MetricsRow m;
      m.batch = b + 1;
      m.mean_loss = interval_loss / static_cast<double>(interval_n);
      m.mean_abs_td = interval_td / static_cast<double>(interval_n);
      m.probe_mean_max_q = q.rowwise().maxCoeff().mean();
      if (!std::isfinite(m.probe_mean_max_q))
        throw RuntimeFailure("non-finite probe Q-values at batch " + std::to_string(b + 1));
      r.metrics.push_back(m);
      interval_loss = interval_td = 0.0;
      interval_n = 0;
    }
  }
  if (!r.main.all_finite()) throw RuntimeFailure("non-finite parameters after training");
  r.batches_completed = cfg.batches;
  r.stale_priority_updates = replay.stale_updates();
  return r;
}

}  // namespace septic_rl
