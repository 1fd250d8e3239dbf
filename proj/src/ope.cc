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

#include "septic_rl/ope.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace septic_rl {

void OpeConfig::validate() const {
  if (!(behavior_floor > 0.0 && behavior_floor * kNumActions < 1.0))
    throw ValidationError("ope.behavior_floor must lie in (0, 1/25)");
  if (bc_steps < 0) throw ValidationError("ope.bc_steps must be >= 0");
  if (bc_batch_size < 2) throw ValidationError("ope.bc_batch_size must be >= 2");
  if (!(bc_learning_rate > 0.0)) throw ValidationError("ope.bc_learning_rate must be positive");
  if (!(bc_validation_fraction >= 0.0 && bc_validation_fraction < 1.0))
    throw ValidationError("ope.bc_validation_fraction must lie in [0,1)");
  if (bc_eval_every < 1) throw ValidationError("ope.bc_eval_every must be >= 1");
  if (fqe_iterations < 0) throw ValidationError("ope.fqe_iterations must be >= 0");
  if (fqe_steps_per_iteration < 0)
    throw ValidationError("ope.fqe_steps_per_iteration must be >= 0");
  if (fqe_batch_size < 2) throw ValidationError("ope.fqe_batch_size must be >= 2");
  if (!(fqe_learning_rate > 0.0)) throw ValidationError("ope.fqe_learning_rate must be positive");
  if (network.head != Head::kLinear) throw ValidationError("ope network must use the linear head");
  if (network.inputs != kNumFeatures || network.outputs != kNumActions)
    throw ValidationError("ope network must map 48 features to 25 actions");
  if (network.hidden < 2 || network.hidden % 2 != 0)
    throw ValidationError("ope network hidden width must be a positive even number");
}

namespace {

Matrix scaled_matrix(std::span<const StateVector> raw, const FeatureScaler& scaler) {
  Matrix m(static_cast<Eigen::Index>(raw.size()), kNumFeatures);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const StateVector s = scaler.transform(raw[i]);
    for (int f = 0; f < kNumFeatures; ++f) m(static_cast<Eigen::Index>(i), f) = s[f];
  }
  return m;
}

void softmax_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp().matrix();
    m.row(i) /= m.row(i).sum();
  }
}

// Flattened (state, action, reward, next, terminal) view of a trajectory set.
struct Flat {
  std::vector<StateVector> states, next_states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<bool> terminal;
};

Flat flatten(std::span<const Trajectory> trajs) {
  Flat f;
  for (const auto& tj : trajs)
    for (const auto& tr : tj.transitions) {
      f.states.push_back(tr.state);
      f.next_states.push_back(tr.next_state);
      f.actions.push_back(tr.action.flat_index());
      f.rewards.push_back(tr.reward);
      f.terminal.push_back(tr.terminal);
    }
  return f;
}

Matrix gather(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace

ActionDistribution apply_floor(const ActionDistribution& p, double floor) {
  ActionDistribution out;
  double total = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    out[a] = std::max(p[a], floor);
    total += out[a];
  }
  for (auto& v : out) v /= total;
  return out;
}

BehaviorPolicyModel::BehaviorPolicyModel(NetworkParams net, FeatureScaler scaler, double floor)
    : net_(std::move(net)), scaler_(scaler), floor_(floor) {}

std::vector<ActionDistribution> BehaviorPolicyModel::probabilities(
    std::span<const StateVector> raw_states) const {
  std::vector<ActionDistribution> out(raw_states.size());
  if (raw_states.empty()) return out;
  Matrix logits = forward(net_, scaled_matrix(raw_states, scaler_), Mode::kInfer);
  softmax_rows(logits);
  for (std::size_t i = 0; i < raw_states.size(); ++i) {
    ActionDistribution p;
    for (int a = 0; a < kNumActions; ++a) p[a] = logits(static_cast<Eigen::Index>(i), a);
    out[i] = apply_floor(p, floor_);
  }
  return out;
}

PolicyFn BehaviorPolicyModel::as_policy() const {
  return [model = *this](std::span<const StateVector> s) { return model.probabilities(s); };
}

BehaviorPolicyModel fit_behavior_policy(std::span<const Trajectory> train,
                                        const FeatureScaler& scaler, const OpeConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(1);

  // Whole trajectories are held out for early stopping on validation NLL.
  std::vector<Trajectory> fit_set, held_out;
  {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_val = static_cast<std::size_t>(cfg.bc_validation_fraction * static_cast<double>(train.size()));
    for (std::size_t k = 0; k < order.size(); ++k)
      (k < n_val ? held_out : fit_set).push_back(train[order[k]]);
  }
  const Flat data = flatten(fit_set);
  const Flat val = flatten(held_out);
  if (data.states.size() < 2)
    throw ValidationError("behavior cloning needs at least two training transitions");
  const Matrix x = scaled_matrix(data.states, scaler);
  const Matrix x_val = val.states.empty() ? Matrix() : scaled_matrix(val.states, scaler);

  NetworkParams net = NetworkParams::initialize(cfg.network, rng);
  AdamState adam = AdamState::for_params(net);
  AdamConfig ac;
  ac.learning_rate = cfg.bc_learning_rate;

  auto validation_nll = [&](NetworkParams& params) {
    recalibrate_batch_statistics(params, x);
    Matrix p = forward(params, x_val, Mode::kInfer);
    softmax_rows(p);
    double nll = 0.0;
    for (std::size_t i = 0; i < val.actions.size(); ++i)
      nll -= std::log(std::max(p(static_cast<Eigen::Index>(i), val.actions[i]), 1e-300));
    return nll / static_cast<double>(val.actions.size());
  };
  NetworkParams best = net;
  double best_nll = val.states.empty() ? 0.0 : validation_nll(best);

  const auto n = data.states.size();
  const auto bs = static_cast<std::size_t>(cfg.bc_batch_size);
  std::vector<std::size_t> rows(bs);
  for (long long step = 0; step < cfg.bc_steps; ++step) {
    for (auto& r : rows) r = rng.below(n);
    ForwardCache cache;
    Matrix p = forward(net, gather(x, rows), Mode::kTrain, &cache);
    softmax_rows(p);
    double loss = 0.0;
    for (std::size_t i = 0; i < bs; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const int a = data.actions[rows[i]];
      loss -= std::log(std::max(p(row, a), 1e-300));
      p(row, a) -= 1.0;
    }
    if (!std::isfinite(loss))
      throw RuntimeFailure("non-finite behavior cloning loss at step " + std::to_string(step));
    p /= static_cast<double>(bs);
    const NetworkParams grads = backward(net, cache, p);
    apply_batch_statistics(net, cache);
    adam_step(net, grads, adam, ac);
    if (!val.states.empty() && ((step + 1) % cfg.bc_eval_every == 0 || step + 1 == cfg.bc_steps)) {
      NetworkParams candidate = net;
      const double nll = validation_nll(candidate);
      if (nll < best_nll) {
        best_nll = nll;
        best = std::move(candidate);
      }
    }
  }
  if (val.states.empty()) {
    recalibrate_batch_statistics(net, x);
    best = std::move(net);
  }
  return BehaviorPolicyModel(std::move(best), scaler, cfg.behavior_floor);
}

std::vector<ActionValues> ValueModel::q_values(std::span<const StateVector> raw_states) const {
  std::vector<ActionValues> out(raw_states.size());
  if (raw_states.empty()) return out;
  const Matrix q = forward(net_, scaled_matrix(raw_states, scaler_), Mode::kInfer);
  for (std::size_t i = 0; i < raw_states.size(); ++i)
    for (int a = 0; a < kNumActions; ++a) out[i][a] = q(static_cast<Eigen::Index>(i), a);
  return out;
}

QFn ValueModel::as_q() const {
  return [model = *this](std::span<const StateVector> s) { return model.q_values(s); };
}

ValueModel fit_value_model(std::span<const Trajectory> train, const FeatureScaler& scaler,
                           const PolicyFn& pi_e, double gamma, const OpeConfig& cfg) {
  cfg.validate();
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0,1]");
  const Flat data = flatten(train);
  if (data.states.size() < 2)
    throw ValidationError("fitted Q evaluation needs at least two training transitions");
  const auto n = data.states.size();
  const Matrix x = scaled_matrix(data.states, scaler);
  const Matrix x_next = scaled_matrix(data.next_states, scaler);
  const std::vector<ActionDistribution> pi_next = pi_e(data.next_states);
  if (pi_next.size() != n) throw ValidationError("evaluation policy returned the wrong batch size");

  Rng rng = Rng(cfg.seed).fork(2);
  NetworkParams net = NetworkParams::initialize(cfg.network, rng);
  AdamState adam = AdamState::for_params(net);
  AdamConfig ac;
  ac.learning_rate = cfg.fqe_learning_rate;
  LossConfig lc;
  lc.lambda_reg = 0.0;

  const auto bs = static_cast<std::size_t>(cfg.fqe_batch_size);
  std::vector<std::size_t> rows(bs);
  std::vector<int> actions(bs);
  Vector targets(static_cast<Eigen::Index>(n));
  Vector batch_targets(static_cast<Eigen::Index>(bs));
  for (int it = 0; it < cfg.fqe_iterations; ++it) {
    if (it > 0) recalibrate_batch_statistics(net, x);
    const Matrix q_next = forward(net, x_next, Mode::kInfer);
    for (std::size_t i = 0; i < n; ++i) {
      double y = data.rewards[i];
      if (!data.terminal[i] && gamma > 0.0) {
        double v = 0.0;
        for (int a = 0; a < kNumActions; ++a)
          v += pi_next[i][a] * q_next(static_cast<Eigen::Index>(i), a);
        y += gamma * v;
      }
      targets(static_cast<Eigen::Index>(i)) = y;
    }
    for (long long step = 0; step < cfg.fqe_steps_per_iteration; ++step) {
      for (std::size_t i = 0; i < bs; ++i) {
        rows[i] = rng.below(n);
        actions[i] = data.actions[rows[i]];
        batch_targets(static_cast<Eigen::Index>(i)) = targets(static_cast<Eigen::Index>(rows[i]));
      }
      LossResult lr = loss_and_gradients(net, gather(x, rows), actions, batch_targets, Vector(), lc);
      if (!std::isfinite(lr.loss)) {
        std::ostringstream msg;
        msg << "non-finite fitted Q evaluation loss at iteration " << it << " step " << step;
        throw RuntimeFailure(msg.str());
      }
      apply_batch_statistics(net, lr.cache);
      adam_step(net, lr.gradients, adam, ac);
    }
  }
  if (cfg.fqe_iterations > 0) recalibrate_batch_statistics(net, x);
  if (!net.all_finite()) throw RuntimeFailure("non-finite fitted Q evaluation parameters");
  return ValueModel(std::move(net), scaler);
}

PolicyFn greedy_policy(const NetworkParams& net, const FeatureScaler& scaler) {
  return [net, scaler](std::span<const StateVector> s) {
    std::vector<ActionDistribution> out(s.size());
    if (s.empty()) return out;
    const std::vector<int> acts = greedy_actions(net, scaled_matrix(s, scaler));
    for (std::size_t i = 0; i < s.size(); ++i) {
      out[i].fill(0.0);
      out[i][acts[i]] = 1.0;
    }
    return out;
  };
}

PolicyFn epsilon_greedy(PolicyFn base, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0,1]");
  return [base = std::move(base), epsilon](std::span<const StateVector> s) {
    std::vector<ActionDistribution> out = base(s);
    for (auto& p : out)
      for (auto& v : p) v = (1.0 - epsilon) * v + epsilon / kNumActions;
    return out;
  };
}

DREstimate doubly_robust_value(std::span<const Trajectory> test, const PolicyFn& pi_e,
                               const PolicyFn& pi_b, const QFn& q_hat, double gamma,
                               double min_behavior_probability) {
  if (test.empty()) throw ValidationError("doubly robust evaluation needs test trajectories");
  const std::size_t n = test.size();
  DREstimate est;
  est.per_trajectory.assign(n, 0.0);
  std::vector<char> hit_zero(n, 0);
  std::vector<std::string> errors(n);

  parallel_for(n, [&](std::size_t k) {
    const Trajectory& tj = test[k];
    std::vector<StateVector> states;
    states.reserve(tj.transitions.size());
    for (const auto& tr : tj.transitions) states.push_back(tr.state);
    const auto pe = pi_e(states);
    const auto pb = pi_b(states);
    const auto q = q_hat(states);
    double v = 0.0;
    for (std::size_t i = tj.transitions.size(); i-- > 0;) {
      const Transition& tr = tj.transitions[i];
      const int a = tr.action.flat_index();
      const double b = pb[i][a];
      if (!std::isfinite(b) || !(b > 0.0) || b < min_behavior_probability) {
        errors[k] = "behavior probability " + format_double(b) + " for patient " + tj.patient_id +
                    " at t=" + std::to_string(tr.t) + " is below the floor";
        return;
      }
      double v_hat = 0.0;
      for (int j = 0; j < kNumActions; ++j) v_hat += pe[i][j] * q[i][j];
      const double rho = pe[i][a] / b;
      if (rho == 0.0) hit_zero[k] = 1;
      v = v_hat + rho * (tr.reward + gamma * v - q[i][a]);
    }
    est.per_trajectory[k] = v;
  });
  for (const auto& e : errors)
    if (!e.empty()) throw ValidationError(e);

  double sum = 0.0;
  for (double v : est.per_trajectory) sum += v;
  est.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : est.per_trajectory) ss += (v - est.mean) * (v - est.mean);
    est.standard_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  est.zero_is_fraction =
      static_cast<double>(std::count(hit_zero.begin(), hit_zero.end(), 1)) / static_cast<double>(n);
  return est;
}

double behavior_value(std::span<const Trajectory> test, double gamma) {
  if (test.empty()) throw ValidationError("behavior value needs test trajectories");
  double total = 0.0;
  for (const auto& tj : test) {
    double g = 1.0, ret = 0.0;
    for (const auto& tr : tj.transitions) {
      ret += g * tr.reward;
      g *= gamma;
    }
    total += ret;
  }
  return total / static_cast<double>(test.size());
}

}  // namespace septic_rl
