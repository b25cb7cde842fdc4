// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "espo/error.hpp"

namespace espo::envs {

std::vector<double> Env::reset(std::uint64_t seed) {
  rng_.seed(seed);
  steps_ = 0;
  return do_reset();
}

StepResult Env::step(std::span<const double> action) {
  if (action.size() != spec_.act_dim) throw InputError(spec_.name + ": wrong action dimension");
  clipped_.resize(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    if (std::isnan(action[i])) throw InputError(spec_.name + ": NaN action");
    clipped_[i] = std::clamp(action[i], spec_.act_low[i], spec_.act_high[i]);
  }
  StepResult out = do_step(clipped_);
  ++steps_;
  if (!out.terminated && steps_ >= spec_.max_episode_steps) out.truncated = true;
  return out;
}

// --- point mass -------------------------------------------------------------

PointMass::PointMass()
    : Env(EnvSpec{"point_mass", 4, 2, {-1.0, -1.0}, {1.0, 1.0}, 200,
                  std::hypot(kWall + kGoal[0], kWall + kGoal[1]) + 0.02}) {}

void PointMass::set_state(std::array<double, 2> pos, std::array<double, 2> vel) {
  pos_ = pos;
  vel_ = vel;
}

std::vector<double> PointMass::observation() const {
  return {pos_[0], pos_[1], vel_[0], vel_[1]};
}

std::vector<double> PointMass::do_reset() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  pos_ = {u(rng_), u(rng_)};
  vel_ = {0.0, 0.0};
  return observation();
}

StepResult PointMass::do_step(std::span<const double> action) {
  for (int k = 0; k < 2; ++k) {
    vel_[k] += kDt * (action[k] - kFriction * vel_[k]);
    pos_[k] += kDt * vel_[k];
    if (pos_[k] > kWall || pos_[k] < -kWall) {
      pos_[k] = std::clamp(pos_[k], -kWall, kWall);
      vel_[k] = 0.0;
    }
  }
  const double dist = std::hypot(pos_[0] - kGoal[0], pos_[1] - kGoal[1]);
  const double effort = action[0] * action[0] + action[1] * action[1];
  return StepResult{observation(), -dist - 0.01 * effort, false, false};
}

// --- pendulum ---------------------------------------------------------------

namespace {

constexpr double kPendulumStiffness =
    3.0 * Pendulum::kGravity / (2.0 * Pendulum::kLength);  // theta_ddot = k sin(theta) + ...

double wrap_angle(double theta) {
  constexpr double pi = std::numbers::pi;
  return std::remainder(theta, 2.0 * pi);  // in [-pi, pi]
}

}  // namespace

Pendulum::Pendulum()
    : Env(EnvSpec{"pendulum", 3, 1, {-kMaxTorque}, {kMaxTorque}, 200,
                  std::numbers::pi * std::numbers::pi + 0.1 * kMaxSpeed * kMaxSpeed +
                      0.001 * kMaxTorque * kMaxTorque}) {}

void Pendulum::set_state(double theta, double theta_dot) {
  theta_ = theta;
  theta_dot_ = theta_dot;
}

std::vector<double> Pendulum::observation() const {
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

double Pendulum::energy(double theta, double theta_dot) {
  return 0.5 * theta_dot * theta_dot + kPendulumStiffness * std::cos(theta);
}

double Pendulum::integrator_energy(double theta, double theta_dot) {
  return energy(theta, theta_dot) + 0.5 * kDt * theta_dot * kPendulumStiffness * std::sin(theta);
}

std::vector<double> Pendulum::do_reset() {
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> speed(-1.0, 1.0);
  theta_ = angle(rng_);
  theta_dot_ = speed(rng_);
  return observation();
}

StepResult Pendulum::do_step(std::span<const double> action) {
  const double u = action[0];
  const double th = wrap_angle(theta_);
  const double cost = th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;
  theta_dot_ += kDt * (kPendulumStiffness * std::sin(theta_) +
                       3.0 / (kMass * kLength * kLength) * u);
  theta_dot_ = std::clamp(theta_dot_, -kMaxSpeed, kMaxSpeed);
  theta_ += kDt * theta_dot_;
  return StepResult{observation(), -cost, false, false};
}

// --- chain ------------------------------------------------------------------

tabular::TabularMdp chain_mdp(const ChainConfig& config) {
  const std::size_t n = config.n_states;
  if (n < 2) throw InputError("chain needs at least two states");
  if (!(config.slip >= 0.0 && config.slip <= 1.0)) throw InputError("chain slip must be in [0, 1]");
  tabular::TabularMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 2;
  mdp.gamma = config.continuation;
  mdp.transition.assign(n * 2 * n, 0.0);
  mdp.reward.assign(n * 2, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t left = s == 0 ? 0 : s - 1;
    const std::size_t right = s + 1 == n ? s : s + 1;
    for (std::size_t a = 0; a < 2; ++a) {
      const std::size_t intended = a == 1 ? right : left;
      const std::size_t reversed = a == 1 ? left : right;
      double* row = mdp.transition.data() + (s * 2 + a) * n;
      row[intended] += 1.0 - config.slip;
      row[reversed] += config.slip;
    }
    const double r = s + 1 == n ? 1.0 : (s == 0 ? 0.05 : 0.0);
    mdp.reward[s * 2 + 0] = r;
    mdp.reward[s * 2 + 1] = r;
  }
  // Start in the left half, weighted toward the far end.
  mdp.initial_dist.assign(n, 0.0);
  const std::size_t half = n / 2;
  double total = 0.0;
  for (std::size_t s = 0; s < half; ++s) total += static_cast<double>(half - s);
  for (std::size_t s = 0; s < half; ++s) mdp.initial_dist[s] = static_cast<double>(half - s) / total;
  mdp.validate();
  return mdp;
}

Chain::Chain(ChainConfig config)
    : Env(EnvSpec{"chain", config.n_states, 1, {-1.0}, {1.0}, 10000, 1.0}),
      config_(config),
      mdp_(chain_mdp(config)) {}

std::vector<double> Chain::one_hot() const {
  std::vector<double> obs(config_.n_states, 0.0);
  obs[state_] = 1.0;
  return obs;
}

std::vector<double> Chain::do_reset() {
  std::discrete_distribution<std::size_t> start(mdp_.initial_dist.begin(), mdp_.initial_dist.end());
  state_ = start(rng_);
  return one_hot();
}

StepResult Chain::do_step(std::span<const double> action) {
  const std::size_t a = decode_action(action[0]);
  const double reward = mdp_.r(state_, a);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double draw = u(rng_);
  double cum = 0.0;
  std::size_t next = mdp_.n_states - 1;
  for (std::size_t t = 0; t < mdp_.n_states; ++t) {
    cum += mdp_.p(state_, a, t);
    if (draw < cum) {
      next = t;
      break;
    }
  }
  state_ = next;
  const bool terminated = u(rng_) >= config_.continuation;
  return StepResult{one_hot(), reward, terminated, false};
}

std::unique_ptr<Env> make_env(std::string_view name) {
  if (name == "point_mass") return std::make_unique<PointMass>();
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "chain") return std::make_unique<Chain>();
  throw InputError("unknown environment '" + std::string(name) + "'");
}

}  // namespace espo::envs
