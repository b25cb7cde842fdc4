// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/train_config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "espo/error.hpp"

namespace espo {
namespace {

std::string_view schedule_name(LrSchedule s) {
  return s == LrSchedule::kConstant ? "constant" : "linear_to_zero";
}

LrSchedule parse_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::kConstant;
  if (s == "linear_to_zero" || s == "linear") return LrSchedule::kLinearToZero;
  throw InputError("unknown lr_schedule '" + std::string(s) + "'");
}

std::string_view cadence_name(StopCadence c) {
  return c == StopCadence::kMinibatch ? "minibatch" : "epoch";
}

StopCadence parse_cadence(std::string_view s) {
  if (s == "minibatch") return StopCadence::kMinibatch;
  if (s == "epoch") return StopCadence::kEpoch;
  throw InputError("unknown stop_cadence '" + std::string(s) + "'");
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw InputError(std::string("config field '") + field + "' " + what);
}

}  // namespace

void TrainConfig::validate() const {
  require(env == "point_mass" || env == "pendulum" || env == "chain", "env", "must name a known environment");
  objective.validate();
  stop_rule.validate();
  require(sampling_batch >= 1, "sampling_batch", "must be positive");
  require(minibatch_size >= 1, "minibatch_size", "must be positive");
  require(sampling_batch % minibatch_size == 0, "minibatch_size", "must divide sampling_batch");
  require(max_epochs >= 1, "max_epochs", "must be at least 1");
  require(total_timesteps >= sampling_batch, "total_timesteps", "must cover at least one sampling batch");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma", "must lie in [0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda", "must lie in [0, 1]");
  require(lr_init > 0.0 && std::isfinite(lr_init), "lr_init", "must be positive");
  require(entropy_coef >= 0.0, "entropy_coef", "must be non-negative");
  require(value_coef >= 0.0, "value_coef", "must be non-negative");
  require(hidden[0] >= 1 && hidden[1] >= 1, "hidden", "must be positive");
  require(eval_episodes >= 1, "eval_episodes", "must be positive");
}

std::size_t TrainConfig::iterations(int world_size) const {
  if (world_size < 1) throw InputError("world size must be at least 1");
  const std::uint64_t per_iter = sampling_batch * static_cast<std::uint64_t>(world_size);
  const std::uint64_t n = total_timesteps / per_iter;
  if (n == 0) throw InputError("total_timesteps is smaller than one iteration across all workers");
  return static_cast<std::size_t>(n);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"env", env},
          {"objective", objectives::kind_name(objective.kind)},
          {"clip_epsilon", objective.clip_epsilon},
          {"kl_beta", objective.kl_beta},
          {"r2po_c", objective.r2po_c},
          {"kl_direction", objectives::kl_direction_name(objective.kl_direction)},
          {"stop_rule", stopping::rule_name(stop_rule.kind)},
          {"stop_threshold", stop_rule.threshold},
          {"stop_cadence", cadence_name(stop_cadence)},
          {"total_timesteps", total_timesteps},
          {"sampling_batch", sampling_batch},
          {"minibatch_size", minibatch_size},
          {"max_epochs", max_epochs},
          {"gamma", gamma},
          {"gae_lambda", gae_lambda},
          {"lr_init", lr_init},
          {"lr_schedule", schedule_name(lr_schedule)},
          {"entropy_coef", entropy_coef},
          {"value_coef", value_coef},
          {"seed", seed},
          {"normalize_obs", normalize_obs},
          {"normalize_reward", normalize_reward},
          {"normalize_advantage", normalize_advantage},
          {"hidden", hidden},
          {"delta_reduction", reduction_name(delta_reduction)},
          {"log_minibatches", log_minibatches},
          {"dump_batches", dump_batches},
          {"eval_episodes", eval_episodes}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InputError("config must be a JSON object");
  static const std::set<std::string> known = [] {
    std::set<std::string> k;
    const nlohmann::json defaults = TrainConfig{}.to_json();
    for (const auto& [key, _] : defaults.items()) k.insert(key);
    return k;
  }();
  for (const auto& [key, _] : doc.items())
    if (!known.contains(key)) throw InputError("unknown config field '" + key + "'");

  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& dst) {
      if (doc.contains(key)) dst = doc.at(key).get<std::remove_reference_t<decltype(dst)>>();
    };
    get("env", c.env);
    if (doc.contains("objective")) c.objective.kind = objectives::parse_kind(doc.at("objective").get<std::string>());
    get("clip_epsilon", c.objective.clip_epsilon);
    get("kl_beta", c.objective.kl_beta);
    get("r2po_c", c.objective.r2po_c);
    if (doc.contains("kl_direction"))
      c.objective.kl_direction = objectives::parse_kl_direction(doc.at("kl_direction").get<std::string>());
    if (doc.contains("stop_rule")) c.stop_rule.kind = stopping::parse_rule(doc.at("stop_rule").get<std::string>());
    get("stop_threshold", c.stop_rule.threshold);
    if (doc.contains("stop_cadence")) c.stop_cadence = parse_cadence(doc.at("stop_cadence").get<std::string>());
    get("total_timesteps", c.total_timesteps);
    get("sampling_batch", c.sampling_batch);
    get("minibatch_size", c.minibatch_size);
    get("max_epochs", c.max_epochs);
    get("gamma", c.gamma);
    get("gae_lambda", c.gae_lambda);
    get("lr_init", c.lr_init);
    if (doc.contains("lr_schedule")) c.lr_schedule = parse_schedule(doc.at("lr_schedule").get<std::string>());
    get("entropy_coef", c.entropy_coef);
    get("value_coef", c.value_coef);
    get("seed", c.seed);
    get("normalize_obs", c.normalize_obs);
    get("normalize_reward", c.normalize_reward);
    get("normalize_advantage", c.normalize_advantage);
    get("hidden", c.hidden);
    if (doc.contains("delta_reduction"))
      c.delta_reduction = parse_reduction(doc.at("delta_reduction").get<std::string>());
    get("log_minibatches", c.log_minibatches);
    get("dump_batches", c.dump_batches);
    get("eval_episodes", c.eval_episodes);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config type error: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed config " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

}  // namespace espo
