// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "espo/collective.hpp"
#include "espo/objectives.hpp"
#include "espo/stopping.hpp"

namespace espo {

enum class LrSchedule { kConstant, kLinearToZero };
enum class StopCadence { kMinibatch, kEpoch };

/// Defaults follow the standard continuous-control PPO table.
struct TrainConfig {
  std::string env = "point_mass";
  objectives::ObjectiveSpec objective;
  stopping::StopRule stop_rule = stopping::StopRule::rd_es(0.25);
  StopCadence stop_cadence = StopCadence::kMinibatch;

  std::uint64_t total_timesteps = 200'000;
  std::size_t sampling_batch = 2048;
  std::size_t minibatch_size = 32;
  std::size_t max_epochs = 20;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double lr_init = 3e-4;
  LrSchedule lr_schedule = LrSchedule::kLinearToZero;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  std::uint64_t seed = 0;
  bool normalize_obs = true;
  bool normalize_reward = true;
  bool normalize_advantage = true;
  std::array<std::size_t, 2> hidden{64, 64};

  /// Distributed only: how per-worker stop statistics are combined.
  Reduction delta_reduction = Reduction::kMin;

  bool log_minibatches = true;
  bool dump_batches = false;
  std::size_t eval_episodes = 10;

  /// Throws InputError naming the offending field.
  void validate() const;
  /// Iterations for a given world size: total / (sampling_batch * world).
  std::size_t iterations(int world_size = 1) const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& doc);
  static TrainConfig load(const std::filesystem::path& path);
};

}  // namespace espo
