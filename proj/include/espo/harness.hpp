// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Multi-seed experiment matrices: run every (cell, seed) in a bounded pool,
// interpolate per-run curves onto a common grid and export mean/std per label.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "espo/train_config.hpp"

namespace espo::harness {

inline constexpr std::size_t kGridPoints = 200;

struct Cell {
  std::string label;
  TrainConfig config;
};

struct ExperimentMatrix {
  std::string name;
  std::vector<Cell> cells;
  std::size_t seeds = 5;
  std::uint64_t base_seed = 0;
  /// Every run of a cell uses base_seed instead of base_seed + k.
  bool same_seed = false;

  /// Labels unique, shared total_timesteps, every config valid.
  void validate() const;
  std::uint64_t seed_for(std::size_t k) const { return same_seed ? base_seed : base_seed + k; }
};

std::vector<std::string> preset_names();
/// Throws InputError on an unknown name.
ExperimentMatrix builtin_matrix(std::string_view name, std::uint64_t total_timesteps,
                                std::size_t seeds, std::string_view env = "pendulum");

/// Per-iteration series read back from a metrics.jsonl file.
struct RunCurve {
  std::vector<double> timesteps;
  std::vector<double> returns;
  std::vector<double> delta;
  std::vector<double> sample_kl;
  std::vector<double> max_log_ratio;
};
RunCurve read_run_curve(const std::filesystem::path& metrics_file);

/// Piecewise-linear interpolation clamped at the ends; xs strictly increasing.
double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x);

struct AggregateRow {
  std::string label;
  double timestep = 0.0;
  double return_mean = 0.0;
  double return_std = 0.0;  // population std over seeds
  double delta_mean = 0.0;
  double kl_mean = 0.0;
  double max_log_ratio_mean = 0.0;
};

struct LabelRuns {
  std::string label;
  std::vector<std::filesystem::path> metrics_files;
};

/// Common grid: kGridPoints points spanning the timesteps every run covers.
std::vector<AggregateRow> aggregate(const std::vector<LabelRuns>& runs,
                                    std::size_t grid_points = kGridPoints);
std::string to_csv(const std::vector<AggregateRow>& rows);
void write_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path);

struct RunOutcome {
  std::string label;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  bool failed = false;
  std::string diagnostic;
  double final_eval_return = 0.0;
  double wall_time_s = 0.0;
};

struct MatrixResult {
  std::vector<RunOutcome> runs;
  std::vector<AggregateRow> rows;
  std::vector<std::string> warnings;
};

/// ESPO_MAX_PARALLEL if set and positive, else the hardware concurrency.
std::size_t max_parallel_from_env();

/// Writes <out>/<label>/seed_<s>/..., <out>/results.csv and <out>/runs.json.
MatrixResult run_matrix(const ExperimentMatrix& matrix, const std::filesystem::path& out_dir,
                        std::size_t max_parallel = max_parallel_from_env());

/// Re-reads per-run metrics under `out_dir` for the successful runs listed in
/// runs.json and rebuilds the aggregate rows.
std::vector<AggregateRow> reaggregate(const std::filesystem::path& out_dir);

/// Two-sided permutation p-value for a difference in means.
double permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                        std::size_t n_permutations, std::mt19937_64& rng);

}  // namespace espo::harness
