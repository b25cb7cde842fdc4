// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Desk-scale episodic environments with one interface: a point mass reaching
// a goal, a torque-limited pendulum swing-up, and a slippery chain whose
// dynamics coincide with a TabularMdp fixture.

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "espo/tabular_mdp.hpp"

namespace espo::envs {

struct EnvSpec {
  std::string name;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::vector<double> act_low;
  std::vector<double> act_high;
  std::size_t max_episode_steps = 1;
  double reward_bound = 0.0;  // |reward| <= reward_bound on every step
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminated = false;  // natural end of the episode
  bool truncated = false;   // time limit reached
};

class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }

  /// Seeds the environment RNG, samples an initial state and zeroes the step
  /// counter.
  std::vector<double> reset(std::uint64_t seed);

  /// Clips the action to [act_low, act_high]; throws InputError on NaN or a
  /// wrong action dimension.
  StepResult step(std::span<const double> action);

  std::size_t elapsed_steps() const { return steps_; }

  /// Fresh instance with identical configuration.
  virtual std::unique_ptr<Env> clone() const = 0;

 protected:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}

  virtual std::vector<double> do_reset() = 0;
  /// `action` is already clipped. Sets reward/observation/terminated.
  virtual StepResult do_step(std::span<const double> action) = 0;

  std::mt19937_64 rng_;

 private:
  EnvSpec spec_;
  std::size_t steps_ = 0;
  std::vector<double> clipped_;
};

/// 2-D point mass driven by a bounded force toward a fixed goal.
/// obs = (x, y, vx, vy); reward = -||pos - goal|| - 0.01 ||action||^2.
/// Initial position uniform in [-1, 1]^2 with zero velocity.
class PointMass final : public Env {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kFriction = 2.0;
  static constexpr double kWall = 2.0;
  static constexpr std::array<double, 2> kGoal{0.5, 0.5};

  PointMass();
  std::unique_ptr<Env> clone() const override { return std::make_unique<PointMass>(); }

  void set_state(std::array<double, 2> pos, std::array<double, 2> vel);
  std::vector<double> observation() const;

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  std::array<double, 2> pos_{};
  std::array<double, 2> vel_{};
};

/// Torque-limited pendulum, theta = 0 upright. obs = (cos, sin, theta_dot);
/// reward = -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2). Semi-implicit Euler
/// with dt = 0.05.
class Pendulum final : public Env {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;

  Pendulum();
  std::unique_ptr<Env> clone() const override { return std::make_unique<Pendulum>(); }

  void set_state(double theta, double theta_dot);
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  std::vector<double> observation() const;

  /// Mechanical energy of the free pendulum (per unit inertia scaling).
  static double energy(double theta, double theta_dot);
  /// Energy corrected by the first-order term conserved by semi-implicit
  /// Euler; constant to O(dt^2) along unforced, unclipped trajectories.
  static double integrator_energy(double theta, double theta_dot);

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

struct ChainConfig {
  std::size_t n_states = 8;
  double slip = 0.1;
  /// Per-step continuation probability; episodes end with probability
  /// 1 - continuation, so undiscounted episode returns estimate the discounted
  /// return of the matching TabularMdp with gamma = continuation.
  double continuation = 0.9;
};

/// Slippery chain. Action a[0] > 0 moves right, otherwise left; with
/// probability `slip` the move is reversed. obs is the one-hot state.
class Chain final : public Env {
 public:
  explicit Chain(ChainConfig config = {});
  std::unique_ptr<Env> clone() const override { return std::make_unique<Chain>(config_); }

  std::size_t state() const { return state_; }
  const ChainConfig& config() const { return config_; }

  static std::size_t decode_action(double a) { return a > 0.0 ? 1 : 0; }

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  std::vector<double> one_hot() const;

  ChainConfig config_;
  tabular::TabularMdp mdp_;
  std::size_t state_ = 0;
};

/// The chain's exact model.
tabular::TabularMdp chain_mdp(const ChainConfig& config = {});

/// "point_mass", "pendulum" or "chain"; throws InputError otherwise.
std::unique_ptr<Env> make_env(std::string_view name);

}  // namespace espo::envs
