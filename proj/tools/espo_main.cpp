// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line entry point: train, train-dist, certify, matrix.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "espo/bound_verifier.hpp"
#include "espo/distributed.hpp"
#include "espo/error.hpp"
#include "espo/harness.hpp"
#include "espo/train_config.hpp"
#include "espo/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void print_summary(const espo::TrainResult& r) {
  std::printf("iterations=%zu failed=%s final_eval_return=%.6g wall_time_s=%.2f\n",
              r.iterations.size(), r.failed ? "true" : "false", r.final_eval_return, r.wall_time_s);
  if (r.failed) std::fprintf(stderr, "diagnostic: %s\n", r.diagnostic.c_str());
}

int cmd_train(const fs::path& config_path, std::optional<std::uint64_t> seed, const fs::path& out) {
  espo::TrainConfig cfg = espo::TrainConfig::load(config_path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const espo::TrainResult r = espo::run_training(cfg, out);
  print_summary(r);
  return r.failed ? 2 : 0;
}

int cmd_train_dist(const fs::path& config_path, int workers, std::optional<std::uint64_t> seed,
                   const fs::path& out, double timeout_s) {
  espo::TrainConfig cfg = espo::TrainConfig::load(config_path);
  if (seed) cfg.seed = *seed;
  espo::dist::DistributedOptions opts;
  opts.world_size = workers;
  opts.out_dir = out;
  opts.timeout = std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000.0));
  const auto result = espo::dist::run_distributed(cfg, opts);
  for (std::size_t k = 0; k < result.workers.size(); ++k) {
    std::printf("rank %zu: ", k);
    print_summary(result.workers[k]);
  }
  if (result.failed) {
    std::fprintf(stderr, "distributed run failed: %s\n", result.diagnostic.c_str());
    return 2;
  }
  return 0;
}

int cmd_certify(std::size_t n, std::uint64_t seed, const fs::path& out) {
  const auto result = espo::bounds::run_certification(seed, n);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << result.report.dump(2) << '\n';
  for (const auto& [name, check] : result.report.at("checks").items()) {
    std::printf("%-22s pass %d/%d  min_slack %.3e\n", name.c_str(), check.at("pass").get<int>(),
                check.at("total").get<int>(), check.at("min_slack").get<double>());
  }
  std::printf("failures=%zu wall_time_s=%.2f report=%s\n", result.failures, result.wall_time_s,
              out.string().c_str());
  return result.failures == 0 ? 0 : 1;
}

int cmd_matrix(const std::string& preset, std::uint64_t timesteps, std::size_t seeds,
               const std::string& env, bool same_seed, const fs::path& out) {
  auto matrix = espo::harness::builtin_matrix(preset, timesteps, seeds, env);
  matrix.same_seed = same_seed;
  const auto result = espo::harness::run_matrix(matrix, out);
  std::size_t failed = 0;
  for (const auto& run : result.runs) {
    std::printf("%-20s seed %-4llu %s eval_return=%.6g wall_time_s=%.2f\n", run.label.c_str(),
                static_cast<unsigned long long>(run.seed), run.failed ? "FAILED" : "ok",
                run.final_eval_return, run.wall_time_s);
    failed += run.failed ? 1 : 0;
  }
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("results: %s\n", (out / "results.csv").string().c_str());
  return failed == result.runs.size() ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ESPO policy-optimization lab"};
  app.require_subcommand(1);

  fs::path config_path, out_dir = "runs/train";
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "Single-process training run");
  train->add_option("--config", config_path, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out_dir, "Output directory");

  int workers = 1;
  fs::path dist_out = "runs/dist";
  double timeout_s = 120.0;
  auto* dist = app.add_subcommand("train-dist", "Data-parallel training with in-process workers");
  dist->add_option("--workers", workers, "World size")->required()->check(CLI::PositiveNumber);
  dist->add_option("--config", config_path, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  dist->add_option("--seed", seed, "Override the config seed");
  dist->add_option("--out", dist_out, "Output directory");
  dist->add_option("--timeout", timeout_s, "Seconds before a missing rank is reported");

  std::size_t n = 1000;
  std::uint64_t cert_seed = 0;
  fs::path report = "report.json";
  auto* certify = app.add_subcommand("certify", "Exact tabular bound certification");
  certify->add_option("--n", n, "Number of instances");
  certify->add_option("--seed", cert_seed, "Ensemble seed");
  certify->add_option("--out", report, "Report path");

  std::string preset, env = "pendulum";
  std::uint64_t timesteps = 200'000;
  std::size_t seeds = 5;
  bool same_seed = false;
  fs::path matrix_out = "runs/matrix";
  auto* matrix = app.add_subcommand("matrix", "Multi-seed preset sweep (ESPO_MAX_PARALLEL caps the pool)");
  matrix->add_option("--preset", preset, "Preset name")
      ->required()
      ->check(CLI::IsMember(espo::harness::preset_names()));
  matrix->add_option("--timesteps", timesteps, "Total timesteps per run");
  matrix->add_option("--seeds", seeds, "Seeds per cell");
  matrix->add_option("--env", env, "Environment (point_mass|pendulum|chain)");
  matrix->add_flag("--same-seed", same_seed, "Run every seed slot with the same seed");
  matrix->add_option("--out", matrix_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, seed, out_dir);
    if (*dist) return cmd_train_dist(config_path, workers, seed, dist_out, timeout_s);
    if (*certify) return cmd_certify(n, cert_seed, report);
    if (*matrix) return cmd_matrix(preset, timesteps, seeds, env, same_seed, matrix_out);
  } catch (const espo::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
