// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The iteration loop: collect with a frozen snapshot, GAE, advantage
// normalization, up to K epochs of minibatch updates interleaved with the
// stop test, then snapshot <- params.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "espo/collective.hpp"
#include "espo/envs.hpp"
#include "espo/mlp.hpp"
#include "espo/rollout.hpp"
#include "espo/stopping.hpp"
#include "espo/train_config.hpp"

namespace espo {

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(const nlohmann::json& record) = 0;
};

class JsonlSink final : public MetricsSink {
 public:
  explicit JsonlSink(const std::filesystem::path& path);
  void write(const nlohmann::json& record) override;

 private:
  std::ofstream out_;
};

class MemorySink final : public MetricsSink {
 public:
  void write(const nlohmann::json& record) override { records.push_back(record); }
  std::vector<nlohmann::json> records;
};

struct IterationReport {
  std::size_t iteration = 0;
  std::uint64_t timesteps = 0;  // cumulative over all workers
  double lr = 0.0;
  std::size_t epochs_used = 0;
  std::size_t updates = 0;
  bool stop_triggered = false;
  std::optional<std::size_t> stop_step;  // 1-based update index within the iteration
  double mean_episode_return = 0.0;      // NaN when no episode ended
  std::size_t episodes = 0;
  std::vector<stopping::EpochStats> trail;  // every stop-test evaluation, in order
  stopping::EpochStats final_stats;         // params after the last update vs snapshot
  double max_minibatch_delta_increment = 0.0;
  std::uint64_t param_hash = 0;
  bool failed = false;
  std::string diagnostic;
  double wall_time_s = 0.0;

  /// Deterministic part only (no wall time).
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<IterationReport> iterations;
  bool failed = false;
  std::string diagnostic;
  double final_eval_return = 0.0;
  double wall_time_s = 0.0;
};

class Trainer {
 public:
  /// `collective` and `sink` are borrowed and may be null (single process, no
  /// metrics).
  explicit Trainer(TrainConfig config, Collective* collective = nullptr,
                   MetricsSink* sink = nullptr);

  /// Throws NumericalError after marking the report failed; the caller decides
  /// whether to halt.
  IterationReport run_iteration();

  /// Runs until total_timesteps are consumed or an iteration fails.
  TrainResult run();

  const TrainConfig& config() const { return config_; }
  const nn::MlpParams& params() const { return params_; }
  const rollout::Normalizers& normalizers() const { return norm_; }
  std::size_t iterations_done() const { return iteration_; }
  std::size_t total_iterations() const { return n_iterations_; }
  /// Batch dumps go to this path when dump_batches is set.
  void set_batch_dump_path(std::filesystem::path p) { dump_path_ = std::move(p); }

 private:
  std::vector<double> batch_log_probs(const rollout::RolloutBatch& batch);
  void gather_minibatch(const rollout::RolloutBatch& batch, std::span<const std::size_t> idx);
  stopping::EpochStats evaluate_stats(const rollout::RolloutBatch& batch, double& reduced);
  void sync_normalizers(const rollout::RunningMoments& obs_delta,
                        const rollout::RunningMoments& ret_delta);
  void check_param_agreement();
  void emit(nlohmann::json record);

  TrainConfig config_;
  LocalCollective local_;
  Collective* coll_;
  MetricsSink* sink_;
  int rank_;
  int world_;
  std::size_t n_iterations_;
  std::size_t iteration_ = 0;
  std::uint64_t sync_step_ = 0;

  nn::MlpParams params_;
  nn::Adam adam_;
  rollout::Normalizers norm_;
  std::unique_ptr<rollout::Collector> collector_;
  std::mt19937_64 shuffle_rng_;
  objectives::Minibatch mb_;
  nn::ForwardPass eval_pass_;  // reused by the full-batch stop test
  std::filesystem::path dump_path_;
};

/// Deterministic evaluation with the mean action; episodes are seeded from
/// `seed` and observations normalized with `obs_moments` when enabled.
double evaluate_policy_rollout(const nn::MlpParams& params, const rollout::Normalizers& norm,
                               const envs::Env& env_template, std::size_t episodes,
                               std::uint64_t seed);

/// Full single-process run writing metrics.jsonl, final_report.json and the
/// final checkpoint into `out_dir` (created if missing).
TrainResult run_training(const TrainConfig& config, const std::filesystem::path& out_dir);

/// Seed for the environment and data streams of one worker.
inline std::uint64_t worker_seed(std::uint64_t base, int rank) {
  return base + static_cast<std::uint64_t>(rank);
}

}  // namespace espo
