// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// On-policy collection, running observation/reward normalization, GAE(lambda)
// and per-batch advantage normalization.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "espo/envs.hpp"
#include "espo/mlp.hpp"

namespace espo::rollout {

inline constexpr double kNormEps = 1e-8;
inline constexpr double kObsClip = 10.0;

/// Per-coordinate running mean and sum of squared deviations.
class RunningMoments {
 public:
  explicit RunningMoments(std::size_t dim = 1) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  void update(std::span<const double> x);
  void update(double x) { update(std::span<const double>(&x, 1)); }
  /// Chan et al. parallel merge; exact up to floating-point reordering.
  void merge(const RunningMoments& other);

  std::size_t dim() const { return mean_.size(); }
  double count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }
  double variance(std::size_t i) const;
  double stddev(std::size_t i) const;
  /// Normalizers stay the identity until at least two samples are seen.
  bool warm() const { return count_ >= 2.0; }

  /// Flat encoding [count, mean..., m2...] for collectives and checkpoints.
  std::vector<double> pack() const;
  static RunningMoments unpack(std::span<const double> flat);
  nlohmann::json to_json() const;
  static RunningMoments from_json(const nlohmann::json& doc);

  bool operator==(const RunningMoments&) const = default;

 private:
  double count_ = 0.0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

/// (obs - mean) / (std + 1e-8) clipped to +-10; identity while cold.
std::vector<double> normalize_obs(std::span<const double> raw, const RunningMoments& moments);
void normalize_obs_into(std::span<const double> raw, const RunningMoments& moments,
                        std::span<double> out);

/// r / (return_std + 1e-8); identity while cold. `return_moments` tracks the
/// discounted running return, not the raw reward.
double scale_reward(double r, const RunningMoments& return_moments);

/// Normalizer statistics of a run. Frozen during an iteration and advanced at
/// the iteration boundary by merging the moments observed during collection.
struct Normalizers {
  RunningMoments obs;
  RunningMoments ret{1};
  bool obs_enabled = true;
  bool reward_enabled = true;

  nlohmann::json to_json() const;
  static Normalizers from_json(const nlohmann::json& doc);
};

struct RolloutBatch {
  std::size_t size = 0;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::vector<double> observations;      // normalized, size x obs_dim
  std::vector<double> raw_observations;  // size x obs_dim
  std::vector<double> actions;           // sampled, before env clipping
  std::vector<double> rewards;           // scaled
  std::vector<double> raw_rewards;
  std::vector<double> behavior_log_probs;
  std::vector<double> values;
  /// Value of the successor state where the segment is cut without a natural
  /// end (time-limit truncation or the final step of the batch), else 0.
  std::vector<double> bootstrap_values;
  std::vector<std::uint8_t> terminated;
  std::vector<std::uint8_t> truncated;
  std::vector<double> advantages;
  std::vector<double> returns;

  /// Undiscounted raw returns and lengths of episodes that ended in this batch.
  std::vector<double> episode_returns;
  std::vector<std::size_t> episode_lengths;

  nlohmann::json row_json(std::size_t t) const;
};

/// Appends one JSON object per step.
void dump_jsonl(const RolloutBatch& batch, const std::filesystem::path& path);

/// Owns one environment instance across iterations so episodes continue over
/// batch boundaries.
class Collector {
 public:
  Collector(std::unique_ptr<envs::Env> env, double gamma, std::uint64_t seed);

  /// Samples n_steps transitions from `snapshot` using the frozen statistics in
  /// `norm`. Moments of the raw observations and discounted returns seen are
  /// accumulated into `obs_delta` / `ret_delta`.
  RolloutBatch collect(const nn::MlpParams& snapshot, const Normalizers& norm, std::size_t n_steps,
                       RunningMoments& obs_delta, RunningMoments& ret_delta);

  const envs::Env& env() const { return *env_; }

 private:
  void begin_episode();

  std::unique_ptr<envs::Env> env_;
  double gamma_;
  std::mt19937_64 rng_;
  std::vector<double> obs_;
  double episode_return_ = 0.0;
  std::size_t episode_length_ = 0;
  double discounted_return_ = 0.0;
  bool started_ = false;
  nn::ForwardPass pass_;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma * next_v - v_t with next_v = 0 on termination,
/// bootstrap_values[t] on truncation or at the last step, values[t+1] otherwise.
/// Throws InputError on misaligned arrays.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> terminated,
                      std::span<const std::uint8_t> truncated,
                      std::span<const double> bootstrap_values, double gamma, double lambda);
void compute_gae(RolloutBatch& batch, double gamma, double lambda);

/// (A - mean) / (std + 1e-8) with the population std. Throws on empty input.
void normalize_advantages(std::span<double> advantages);
inline void normalize_advantages(RolloutBatch& batch) { normalize_advantages(batch.advantages); }

}  // namespace espo::rollout
