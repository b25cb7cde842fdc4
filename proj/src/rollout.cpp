// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "espo/error.hpp"

namespace espo::rollout {

void RunningMoments::update(std::span<const double> x) {
  if (x.size() != mean_.size()) throw InputError("moment update has the wrong dimension");
  count_ += 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean_[i];
    mean_[i] += d / count_;
    m2_[i] += d * (x[i] - mean_[i]);
  }
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.dim() != dim()) throw InputError("cannot merge moments of different dimension");
  if (other.count_ == 0.0) return;
  if (count_ == 0.0) {
    *this = other;
    return;
  }
  const double n = count_ + other.count_;
  for (std::size_t i = 0; i < dim(); ++i) {
    const double d = other.mean_[i] - mean_[i];
    mean_[i] += d * other.count_ / n;
    m2_[i] += other.m2_[i] + d * d * count_ * other.count_ / n;
  }
  count_ = n;
}

double RunningMoments::variance(std::size_t i) const {
  return std::max(m2_[i], 0.0) / std::max(count_ - 1.0, 1.0);
}

double RunningMoments::stddev(std::size_t i) const { return std::sqrt(variance(i)); }

std::vector<double> RunningMoments::pack() const {
  std::vector<double> out;
  out.reserve(1 + 2 * dim());
  out.push_back(count_);
  out.insert(out.end(), mean_.begin(), mean_.end());
  out.insert(out.end(), m2_.begin(), m2_.end());
  return out;
}

RunningMoments RunningMoments::unpack(std::span<const double> flat) {
  if (flat.empty() || (flat.size() - 1) % 2 != 0) throw InputError("malformed packed moments");
  const std::size_t d = (flat.size() - 1) / 2;
  RunningMoments m(d);
  m.count_ = flat[0];
  std::copy_n(flat.begin() + 1, d, m.mean_.begin());
  std::copy_n(flat.begin() + 1 + d, d, m.m2_.begin());
  return m;
}

nlohmann::json RunningMoments::to_json() const {
  return {{"count", count_}, {"mean", mean_}, {"m2", m2_}};
}

RunningMoments RunningMoments::from_json(const nlohmann::json& doc) {
  RunningMoments m;
  m.count_ = doc.at("count").get<double>();
  m.mean_ = doc.at("mean").get<std::vector<double>>();
  m.m2_ = doc.at("m2").get<std::vector<double>>();
  if (m.mean_.size() != m.m2_.size() || m.count_ < 0.0) throw InputError("malformed moments");
  return m;
}

void normalize_obs_into(std::span<const double> raw, const RunningMoments& moments,
                        std::span<double> out) {
  if (raw.size() != moments.dim() || out.size() != raw.size())
    throw InputError("observation does not match the normalizer dimension");
  if (!moments.warm()) {
    std::copy(raw.begin(), raw.end(), out.begin());
    return;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double z = (raw[i] - moments.mean()[i]) / (moments.stddev(i) + kNormEps);
    out[i] = std::clamp(z, -kObsClip, kObsClip);
  }
}

std::vector<double> normalize_obs(std::span<const double> raw, const RunningMoments& moments) {
  std::vector<double> out(raw.size());
  normalize_obs_into(raw, moments, out);
  return out;
}

double scale_reward(double r, const RunningMoments& return_moments) {
  if (!return_moments.warm()) return r;
  return r / (return_moments.stddev(0) + kNormEps);
}

nlohmann::json Normalizers::to_json() const {
  return {{"obs", obs.to_json()},
          {"ret", ret.to_json()},
          {"obs_enabled", obs_enabled},
          {"reward_enabled", reward_enabled}};
}

Normalizers Normalizers::from_json(const nlohmann::json& doc) {
  Normalizers n;
  n.obs = RunningMoments::from_json(doc.at("obs"));
  n.ret = RunningMoments::from_json(doc.at("ret"));
  n.obs_enabled = doc.value("obs_enabled", true);
  n.reward_enabled = doc.value("reward_enabled", true);
  return n;
}

nlohmann::json RolloutBatch::row_json(std::size_t t) const {
  auto slice = [](const std::vector<double>& v, std::size_t t, std::size_t w) {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(t * w),
                               v.begin() + static_cast<std::ptrdiff_t>((t + 1) * w));
  };
  nlohmann::json row{{"t", t},
                     {"obs", slice(observations, t, obs_dim)},
                     {"raw_obs", slice(raw_observations, t, obs_dim)},
                     {"action", slice(actions, t, act_dim)},
                     {"reward", rewards[t]},
                     {"raw_reward", raw_rewards[t]},
                     {"behavior_log_prob", behavior_log_probs[t]},
                     {"value", values[t]},
                     {"bootstrap_value", bootstrap_values[t]},
                     {"terminated", terminated[t] != 0},
                     {"truncated", truncated[t] != 0}};
  if (advantages.size() == size) row["advantage"] = advantages[t];
  if (returns.size() == size) row["return"] = returns[t];
  return row;
}

void dump_jsonl(const RolloutBatch& batch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw InputError("cannot open " + path.string());
  for (std::size_t t = 0; t < batch.size; ++t) out << batch.row_json(t).dump() << '\n';
}

Collector::Collector(std::unique_ptr<envs::Env> env, double gamma, std::uint64_t seed)
    : env_(std::move(env)), gamma_(gamma), rng_(seed) {
  if (!env_) throw InputError("collector needs an environment");
}

void Collector::begin_episode() {
  obs_ = env_->reset(rng_());
  episode_return_ = 0.0;
  episode_length_ = 0;
  discounted_return_ = 0.0;
  started_ = true;
}

RolloutBatch Collector::collect(const nn::MlpParams& snapshot, const Normalizers& norm,
                                std::size_t n_steps, RunningMoments& obs_delta,
                                RunningMoments& ret_delta) {
  if (n_steps == 0) throw InputError("n_steps must be positive");
  const auto& spec = env_->spec();
  if (snapshot.layout.obs_dim != spec.obs_dim || snapshot.layout.act_dim != spec.act_dim)
    throw InputError("policy layout does not match the environment");
  if (!started_) begin_episode();

  const std::size_t od = spec.obs_dim;
  const std::size_t ad = spec.act_dim;
  RolloutBatch b;
  b.size = n_steps;
  b.obs_dim = od;
  b.act_dim = ad;
  b.observations.resize(n_steps * od);
  b.raw_observations.resize(n_steps * od);
  b.actions.resize(n_steps * ad);
  b.rewards.resize(n_steps);
  b.raw_rewards.resize(n_steps);
  b.behavior_log_probs.resize(n_steps);
  b.values.resize(n_steps);
  b.bootstrap_values.assign(n_steps, 0.0);
  b.terminated.assign(n_steps, 0);
  b.truncated.assign(n_steps, 0);

  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> normed(od);
  auto normalize = [&](std::span<const double> raw, std::span<double> out) {
    if (norm.obs_enabled)
      normalize_obs_into(raw, norm.obs, out);
    else
      std::copy(raw.begin(), raw.end(), out.begin());
  };
  auto value_of = [&](std::span<const double> raw) {
    normalize(raw, normed);
    nn::forward_into(snapshot, normed, pass_);
    return pass_.value(0);
  };

  for (std::size_t t = 0; t < n_steps; ++t) {
    std::span<double> obs_t(b.observations.data() + t * od, od);
    std::copy(obs_.begin(), obs_.end(), b.raw_observations.begin() + static_cast<std::ptrdiff_t>(t * od));
    obs_delta.update(obs_);
    normalize(obs_, obs_t);

    nn::forward_into(snapshot, obs_t, pass_);
    const auto mean = pass_.mean(0);
    std::span<double> act(b.actions.data() + t * ad, ad);
    for (std::size_t j = 0; j < ad; ++j) act[j] = mean[j] + std::exp(pass_.log_std[j]) * n01(rng_);
    b.behavior_log_probs[t] = nn::log_prob(mean, pass_.log_std, act);
    b.values[t] = pass_.value(0);

    envs::StepResult step = env_->step(act);
    b.raw_rewards[t] = step.reward;
    discounted_return_ = gamma_ * discounted_return_ + step.reward;
    ret_delta.update(discounted_return_);
    b.rewards[t] = norm.reward_enabled ? scale_reward(step.reward, norm.ret) : step.reward;
    episode_return_ += step.reward;
    ++episode_length_;

    b.terminated[t] = step.terminated ? 1 : 0;
    b.truncated[t] = step.truncated ? 1 : 0;
    if (step.truncated || (!step.terminated && t + 1 == n_steps))
      b.bootstrap_values[t] = value_of(step.observation);

    if (step.terminated || step.truncated) {
      b.episode_returns.push_back(episode_return_);
      b.episode_lengths.push_back(episode_length_);
      begin_episode();
    } else {
      obs_ = std::move(step.observation);
    }
  }
  return b;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> terminated,
                      std::span<const std::uint8_t> truncated,
                      std::span<const double> bootstrap_values, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || terminated.size() != n || truncated.size() != n ||
      bootstrap_values.size() != n)
    throw InputError("GAE inputs are misaligned");
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0))
    throw InputError("gamma and lambda must lie in [0, 1]");

  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const bool cut = terminated[i] || truncated[i] || i + 1 == n;
    double next_v;
    if (terminated[i])
      next_v = 0.0;
    else if (cut)
      next_v = bootstrap_values[i];
    else
      next_v = values[i + 1];
    const double delta = rewards[i] + gamma * next_v - values[i];
    const double adv = cut ? delta : delta + gamma * lambda * next_adv;
    out.advantages[i] = adv;
    out.returns[i] = adv + values[i];
    next_adv = adv;
  }
  return out;
}

void compute_gae(RolloutBatch& batch, double gamma, double lambda) {
  GaeResult g = compute_gae(batch.rewards, batch.values, batch.terminated, batch.truncated,
                            batch.bootstrap_values, gamma, lambda);
  batch.advantages = std::move(g.advantages);
  batch.returns = std::move(g.returns);
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) throw InputError("cannot normalize an empty advantage batch");
  const double n = static_cast<double>(advantages.size());
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : advantages) a = (a - mean) / (sd + kNormEps);
}

}  // namespace espo::rollout
