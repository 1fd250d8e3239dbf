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

#include "septic_rl/qnet.h"

#include <algorithm>
#include <cmath>

namespace septic_rl {

namespace {

constexpr double kLeakySlope = 0.5;

void fill_normal(Matrix& m, double sd, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal(0.0, sd);
}

Matrix leaky(const Matrix& y) {
  return y.unaryExpr([](double z) { return leaky_relu(z); });
}

Matrix leaky_grad(const Matrix& y) {
  return y.unaryExpr([](double z) { return z > 0.0 ? 1.0 : kLeakySlope; });
}

// Batch-norm forward for one layer. Returns the normalized activations.
Matrix batch_norm(const Matrix& z, const Matrix& scale, const Matrix& shift,
                  const Matrix& running_mean, const Matrix& running_var, Mode mode,
                  double eps, RowVector& mean, RowVector& var, RowVector& inv_std,
                  Matrix& xhat) {
  if (mode == Mode::kTrain) {
    mean = z.colwise().mean();
    var = (z.rowwise() - mean).array().square().colwise().mean().matrix();
  } else {
    mean = running_mean.row(0);
    var = running_var.row(0);
  }
  inv_std = (var.array() + eps).rsqrt().matrix();
  xhat = ((z.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  return ((xhat.array().rowwise() * scale.row(0).array()).rowwise() + shift.row(0).array())
      .matrix();
}

// Backward through batch norm (Train mode). Given dL/dy returns dL/dz and
// accumulates scale/shift gradients.
Matrix batch_norm_backward(const Matrix& dy, const Matrix& xhat, const RowVector& inv_std,
                           const Matrix& scale, Matrix& d_scale, Matrix& d_shift) {
  const double n = static_cast<double>(dy.rows());
  d_scale = (dy.array() * xhat.array()).colwise().sum().matrix();
  d_shift = dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * scale.row(0).array()).matrix();
  const RowVector sum_dxhat = dxhat.colwise().sum();
  const RowVector sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum().matrix();
  Matrix dz = (n * dxhat.array()).matrix();
  dz.rowwise() -= sum_dxhat;
  dz -= (xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return (dz.array().rowwise() * (inv_std.array() / n)).matrix();
}

bool same_shape(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace

double leaky_relu(double z) { return std::max(z, kLeakySlope * z); }

NetworkParams NetworkParams::zeros(const NetworkShape& shape) {
  if (shape.hidden % 2 != 0 && shape.head == Head::kDueling)
    throw ValidationError("dueling head needs an even hidden width");
  NetworkParams p;
  p.shape = shape;
  const int h = shape.hidden;
  p.w1 = Matrix::Zero(h, shape.inputs);
  p.bn1_scale = Matrix::Ones(1, h);
  p.bn1_shift = Matrix::Zero(1, h);
  p.w2 = Matrix::Zero(h, h);
  p.bn2_scale = Matrix::Ones(1, h);
  p.bn2_shift = Matrix::Zero(1, h);
  if (shape.head == Head::kDueling) {
    p.value_w = Matrix::Zero(1, h / 2);
    p.value_b = Matrix::Zero(1, 1);
    p.adv_w = Matrix::Zero(shape.outputs, h / 2);
    p.adv_b = Matrix::Zero(1, shape.outputs);
  } else {
    p.out_w = Matrix::Zero(shape.outputs, h);
    p.out_b = Matrix::Zero(1, shape.outputs);
  }
  p.bn1_mean = Matrix::Zero(1, h);
  p.bn1_var = Matrix::Ones(1, h);
  p.bn2_mean = Matrix::Zero(1, h);
  p.bn2_var = Matrix::Ones(1, h);
  return p;
}

NetworkParams NetworkParams::initialize(const NetworkShape& shape, Rng& rng) {
  NetworkParams p = zeros(shape);
  auto he = [](Eigen::Index fan_in) {
    return std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(fan_in)));
  };
  fill_normal(p.w1, he(shape.inputs), rng);
  fill_normal(p.w2, he(shape.hidden), rng);
  if (shape.head == Head::kDueling) {
    fill_normal(p.value_w, he(shape.hidden / 2), rng);
    fill_normal(p.adv_w, he(shape.hidden / 2), rng);
  } else {
    fill_normal(p.out_w, he(shape.hidden), rng);
  }
  return p;
}

std::vector<std::pair<std::string, Matrix*>> NetworkParams::trainable() {
  std::vector<std::pair<std::string, Matrix*>> t = {
      {"w1", &w1}, {"bn1_scale", &bn1_scale}, {"bn1_shift", &bn1_shift},
      {"w2", &w2}, {"bn2_scale", &bn2_scale}, {"bn2_shift", &bn2_shift}};
  if (shape.head == Head::kDueling) {
    t.insert(t.end(), {{"value_w", &value_w}, {"value_b", &value_b},
                       {"adv_w", &adv_w}, {"adv_b", &adv_b}});
  } else {
    t.insert(t.end(), {{"out_w", &out_w}, {"out_b", &out_b}});
  }
  return t;
}

std::vector<std::pair<std::string, const Matrix*>> NetworkParams::trainable() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<NetworkParams*>(this)->trainable()) out.emplace_back(name, m);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> NetworkParams::statistics() {
  return {{"bn1_mean", &bn1_mean}, {"bn1_var", &bn1_var},
          {"bn2_mean", &bn2_mean}, {"bn2_var", &bn2_var}};
}

std::vector<std::pair<std::string, const Matrix*>> NetworkParams::statistics() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<NetworkParams*>(this)->statistics()) out.emplace_back(name, m);
  return out;
}

bool NetworkParams::all_finite() const {
  for (const auto& [name, m] : trainable())
    if (!m->allFinite()) return false;
  for (const auto& [name, m] : statistics())
    if (!m->allFinite()) return false;
  return true;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : trainable()) n += static_cast<std::size_t>(m->size());
  return n;
}

bool NetworkParams::operator==(const NetworkParams& other) const {
  if (!(shape == other.shape)) return false;
  auto a = trainable(), b = other.trainable();
  auto sa = statistics(), sb = other.statistics();
  a.insert(a.end(), sa.begin(), sa.end());
  b.insert(b.end(), sb.begin(), sb.end());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_shape(*a[i].second, *b[i].second) || *a[i].second != *b[i].second) return false;
  }
  return true;
}

Matrix forward(const NetworkParams& p, const Matrix& input, Mode mode, ForwardCache* cache) {
  if (input.cols() != p.shape.inputs)
    throw ValidationError("network expects " + std::to_string(p.shape.inputs) +
                          " inputs, got " + std::to_string(input.cols()));
  if (!input.allFinite()) throw ValidationError("non-finite network input");
  if (mode == Mode::kTrain && input.rows() < 2)
    throw ValidationError("Train-mode forward needs a batch of at least 2");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.mode = mode;
  const double eps = p.shape.bn_epsilon;

  const Matrix z1 = input * p.w1.transpose();
  c.y1 = batch_norm(z1, p.bn1_scale, p.bn1_shift, p.bn1_mean, p.bn1_var, mode, eps, c.mean1,
                    c.var1, c.inv_std1, c.xhat1);
  c.h1 = leaky(c.y1);
  const Matrix z2 = c.h1 * p.w2.transpose();
  c.y2 = batch_norm(z2, p.bn2_scale, p.bn2_shift, p.bn2_mean, p.bn2_var, mode, eps, c.mean2,
                    c.var2, c.inv_std2, c.xhat2);
  c.h2 = leaky(c.y2);

  if (p.shape.head == Head::kDueling) {
    const int half = p.shape.hidden / 2;
    const auto hv = c.h2.leftCols(half);
    const auto ha = c.h2.rightCols(half);
    c.value = (hv * p.value_w.transpose()).col(0).array() + p.value_b(0, 0);
    c.advantage = (ha * p.adv_w.transpose()).rowwise() + p.adv_b.row(0);
    const Vector adv_mean = c.advantage.rowwise().mean();
    c.output = c.advantage;
    c.output.colwise() += c.value - adv_mean;
  } else {
    c.output = (c.h2 * p.out_w.transpose()).rowwise() + p.out_b.row(0);
  }
  if (cache) cache->input = input;
  return c.output;
}

NetworkParams backward(const NetworkParams& p, const ForwardCache& c, const Matrix& d_output) {
  if (c.mode != Mode::kTrain) throw ValidationError("backward needs a Train-mode cache");
  NetworkParams g;
  g.shape = p.shape;
  Matrix dh2;
  if (p.shape.head == Head::kDueling) {
    const int half = p.shape.hidden / 2;
    const Vector d_value = d_output.rowwise().sum();
    Matrix d_adv = d_output;
    d_adv.colwise() -= d_output.rowwise().mean();
    g.value_w = d_value.transpose() * c.h2.leftCols(half);
    g.value_b = Matrix::Constant(1, 1, d_value.sum());
    g.adv_w = d_adv.transpose() * c.h2.rightCols(half);
    g.adv_b = d_adv.colwise().sum();
    dh2.resize(c.h2.rows(), p.shape.hidden);
    dh2.leftCols(half) = d_value * p.value_w;
    dh2.rightCols(half) = d_adv * p.adv_w;
  } else {
    g.out_w = d_output.transpose() * c.h2;
    g.out_b = d_output.colwise().sum();
    dh2 = d_output * p.out_w;
  }
  const Matrix dy2 = (dh2.array() * leaky_grad(c.y2).array()).matrix();
  const Matrix dz2 = batch_norm_backward(dy2, c.xhat2, c.inv_std2, p.bn2_scale, g.bn2_scale,
                                         g.bn2_shift);
  g.w2 = dz2.transpose() * c.h1;
  const Matrix dh1 = dz2 * p.w2;
  const Matrix dy1 = (dh1.array() * leaky_grad(c.y1).array()).matrix();
  const Matrix dz1 = batch_norm_backward(dy1, c.xhat1, c.inv_std1, p.bn1_scale, g.bn1_scale,
                                         g.bn1_shift);
  g.w1 = dz1.transpose() * c.input;
  return g;
}

void apply_batch_statistics(NetworkParams& p, const ForwardCache& c) {
  if (c.mode != Mode::kTrain) return;
  const double m = p.shape.bn_momentum;
  const double n = static_cast<double>(c.h1.rows());
  const double unbias = n / (n - 1.0);
  p.bn1_mean = m * p.bn1_mean + (1.0 - m) * c.mean1;
  p.bn1_var = m * p.bn1_var + (1.0 - m) * unbias * c.var1;
  p.bn2_mean = m * p.bn2_mean + (1.0 - m) * c.mean2;
  p.bn2_var = m * p.bn2_var + (1.0 - m) * unbias * c.var2;
}

void recalibrate_batch_statistics(NetworkParams& p, const Matrix& inputs) {
  ForwardCache c;
  forward(p, inputs, Mode::kTrain, &c);
  p.bn1_mean = c.mean1;
  p.bn1_var = c.var1;
  p.bn2_mean = c.mean2;
  p.bn2_var = c.var2;
}

Matrix states_to_matrix(std::span<const StateVector> states) {
  Matrix m(static_cast<Eigen::Index>(states.size()), kNumFeatures);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (int f = 0; f < kNumFeatures; ++f) m(static_cast<Eigen::Index>(i), f) = states[i][f];
  return m;
}

AdamState AdamState::for_params(const NetworkParams& params) {
  AdamState s;
  s.first_moment = NetworkParams::zeros(params.shape);
  for (auto& [name, m] : s.first_moment.trainable()) m->setZero();
  s.second_moment = s.first_moment;
  return s;
}

void adam_step(NetworkParams& params, const NetworkParams& gradients, AdamState& state,
               const AdamConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = params.trainable();
  auto g = gradients.trainable();
  auto m = state.first_moment.trainable();
  auto v = state.second_moment.trainable();
  for (std::size_t i = 0; i < p.size(); ++i) {
    Matrix& mi = *m[i].second;
    Matrix& vi = *v[i].second;
    const Matrix& gi = *g[i].second;
    mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
    vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi.cwiseProduct(gi);
    p[i].second->array() -=
        cfg.learning_rate * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + cfg.epsilon);
  }
}

void LossConfig::validate() const {
  if (!(q_thresh > 0.0)) throw ValidationError("loss.q_thresh must be positive");
  if (!(target_clip > 0.0)) throw ValidationError("loss.target_clip must be positive");
  if (!(lambda_reg >= 0.0)) throw ValidationError("loss.lambda_reg must be non-negative");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("loss.gamma must lie in [0,1)");
}

int argmax_row(const Matrix& q, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index a = 1; a < q.cols(); ++a)
    if (q(row, a) > q(row, best)) best = static_cast<int>(a);
  return best;
}

Vector double_q_target(const NetworkParams& main, const NetworkParams& target,
                       const Matrix& next_states, const Vector& rewards,
                       const std::vector<bool>& terminal, const LossConfig& cfg) {
  const Eigen::Index n = next_states.rows();
  if (rewards.size() != n || static_cast<Eigen::Index>(terminal.size()) != n)
    throw ValidationError("double_q_target: batch size mismatch");
  Vector y = rewards;
  bool any_live = std::find(terminal.begin(), terminal.end(), false) != terminal.end();
  if (!any_live) return y;
  const Matrix q_main = forward(main, next_states, Mode::kInfer);
  const Matrix q_target = forward(target, next_states, Mode::kInfer);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (terminal[static_cast<std::size_t>(i)]) continue;
    const int a_star = argmax_row(q_main, i);
    const double boot = std::clamp(q_target(i, a_star), -cfg.target_clip, cfg.target_clip);
    y(i) += cfg.gamma * boot;
  }
  return y;
}

LossResult loss_and_gradients(const NetworkParams& main, const Matrix& states,
                              std::span<const int> actions, const Vector& targets,
                              const Vector& weights, const LossConfig& cfg) {
  const Eigen::Index n = states.rows();
  if (static_cast<Eigen::Index>(actions.size()) != n || targets.size() != n ||
      (weights.size() != 0 && weights.size() != n))
    throw ValidationError("loss_and_gradients: batch size mismatch");
  LossResult r;
  const Matrix q = forward(main, states, Mode::kTrain, &r.cache);
  r.td_errors.resize(n);
  r.q_taken.resize(n);
  Matrix d_q = Matrix::Zero(n, q.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  double squared = 0.0, penalty = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    const double qa = q(i, a);
    const double w = weights.size() ? weights(i) : 1.0;
    const double td = targets(i) - qa;
    r.q_taken(i) = qa;
    r.td_errors(i) = td;
    squared += w * td * td;
    double grad = -2.0 * w * td;
    const double excess = std::abs(qa) - cfg.q_thresh;
    if (excess > 0.0) {
      penalty += excess;
      grad += cfg.lambda_reg * (qa > 0.0 ? 1.0 : -1.0);
    }
    d_q(i, a) = grad * inv_n;
  }
  r.loss = squared * inv_n + cfg.lambda_reg * penalty * inv_n;
  r.gradients = backward(main, r.cache, d_q);
  return r;
}

void sync_target(const NetworkParams& main, NetworkParams& target) { target = main; }

std::vector<int> greedy_actions(const NetworkParams& params, const Matrix& scaled_states) {
  const Matrix q = forward(params, scaled_states, Mode::kInfer);
  std::vector<int> out(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(q, i);
  return out;
}

Action greedy_action(const NetworkParams& params, const StateVector& scaled_state) {
  const Matrix x = states_to_matrix(std::span<const StateVector>(&scaled_state, 1));
  return Action::from_flat(greedy_actions(params, x).front());
}

}  // namespace septic_rl
