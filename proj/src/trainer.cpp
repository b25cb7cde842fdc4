// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "espo/error.hpp"
#include "espo/objectives.hpp"

namespace espo {
namespace {

std::uint64_t stream_seed(std::uint64_t base, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32), stream};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

constexpr std::uint32_t kCollectorStream = 1;
constexpr std::uint32_t kShuffleStream = 2;
constexpr std::uint64_t kEvalSeedOffset = 1'000'003;

nlohmann::json nullable(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace

JsonlSink::JsonlSink(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  if (!out_) throw InputError("cannot open metrics file " + path.string());
}

void JsonlSink::write(const nlohmann::json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
}

nlohmann::json IterationReport::to_json() const {
  return {{"type", "iteration"},
          {"iter", iteration},
          {"timesteps", timesteps},
          {"lr", lr},
          {"epochs_used", epochs_used},
          {"updates", updates},
          {"stop_triggered", stop_triggered},
          {"stop_step", stop_step ? nlohmann::json(*stop_step) : nlohmann::json(nullptr)},
          {"mean_episode_return", nullable(mean_episode_return)},
          {"episodes", episodes},
          {"delta", final_stats.delta},
          {"sample_kl", final_stats.sample_kl},
          {"min_log_ratio", final_stats.min_log_ratio},
          {"max_log_ratio", final_stats.max_log_ratio},
          {"max_delta_increment", max_minibatch_delta_increment},
          {"param_hash", hex64(param_hash)},
          {"failed", failed},
          {"diagnostic", diagnostic}};
}

Trainer::Trainer(TrainConfig config, Collective* collective, MetricsSink* sink)
    : config_(std::move(config)),
      coll_(collective ? collective : &local_),
      sink_(sink),
      rank_(coll_->rank()),
      world_(coll_->world_size()),
      n_iterations_(0),
      adam_(0) {
  config_.validate();
  n_iterations_ = config_.iterations(world_);

  auto env = envs::make_env(config_.env);
  const nn::NetLayout layout{env->spec().obs_dim, env->spec().act_dim, config_.hidden};
  std::mt19937_64 init_rng(config_.seed);
  params_ = nn::MlpParams::initialize(layout, init_rng);
  adam_ = nn::Adam(params_.values.size());

  norm_.obs = rollout::RunningMoments(layout.obs_dim);
  norm_.ret = rollout::RunningMoments(1);
  norm_.obs_enabled = config_.normalize_obs;
  norm_.reward_enabled = config_.normalize_reward;

  const std::uint64_t data_seed = worker_seed(config_.seed, rank_);
  collector_ = std::make_unique<rollout::Collector>(std::move(env), config_.gamma,
                                                    stream_seed(data_seed, kCollectorStream));
  shuffle_rng_.seed(stream_seed(data_seed, kShuffleStream));
}

void Trainer::emit(nlohmann::json record) {
  if (sink_) sink_->write(record);
}

std::vector<double> Trainer::batch_log_probs(const rollout::RolloutBatch& batch) {
  nn::forward_into(params_, batch.observations, eval_pass_);
  return objectives::log_probs(eval_pass_, batch.actions);
}

void Trainer::gather_minibatch(const rollout::RolloutBatch& batch, std::span<const std::size_t> idx) {
  const std::size_t od = batch.obs_dim;
  const std::size_t ad = batch.act_dim;
  const std::size_t m = idx.size();
  mb_.size = m;
  mb_.observations.resize(m * od);
  mb_.actions.resize(m * ad);
  mb_.behavior_log_probs.resize(m);
  mb_.advantages.resize(m);
  mb_.returns.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t t = idx[i];
    std::copy_n(batch.observations.begin() + static_cast<std::ptrdiff_t>(t * od), od,
                mb_.observations.begin() + static_cast<std::ptrdiff_t>(i * od));
    std::copy_n(batch.actions.begin() + static_cast<std::ptrdiff_t>(t * ad), ad,
                mb_.actions.begin() + static_cast<std::ptrdiff_t>(i * ad));
    mb_.behavior_log_probs[i] = batch.behavior_log_probs[t];
    mb_.advantages[i] = batch.advantages[t];
    mb_.returns[i] = batch.returns[t];
  }
}

stopping::EpochStats Trainer::evaluate_stats(const rollout::RolloutBatch& batch, double& reduced) {
  const std::vector<double> logp = batch_log_probs(batch);
  stopping::EpochStats s = stopping::compute_stats(logp, batch.behavior_log_probs);
  const double local = config_.stop_rule.kind == stopping::RuleKind::kNone
                           ? s.delta
                           : stopping::rule_statistic(config_.stop_rule, s);
  const auto parts = coll_->all_gather(std::span<const double>(&local, 1), sync_step_++, MessageTag::kDelta);
  std::vector<double> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.at(0));
  reduced = reduce_scalar(values, config_.delta_reduction);
  return s;
}

void Trainer::sync_normalizers(const rollout::RunningMoments& obs_delta,
                               const rollout::RunningMoments& ret_delta) {
  std::vector<double> packed = obs_delta.pack();
  const std::vector<double> ret_packed = ret_delta.pack();
  packed.insert(packed.end(), ret_packed.begin(), ret_packed.end());
  const auto parts = coll_->all_gather(packed, sync_step_++, MessageTag::kMoments);

  const std::size_t obs_len = obs_delta.pack().size();
  rollout::RunningMoments obs_all(obs_delta.dim());
  rollout::RunningMoments ret_all(1);
  for (const auto& p : parts) {
    if (p.size() != packed.size()) throw SyncError("normalizer contribution has the wrong size");
    obs_all.merge(rollout::RunningMoments::unpack(std::span<const double>(p).first(obs_len)));
    ret_all.merge(rollout::RunningMoments::unpack(std::span<const double>(p).subspan(obs_len)));
  }
  norm_.obs.merge(obs_all);
  norm_.ret.merge(ret_all);
}

void Trainer::check_param_agreement() {
  const std::uint64_t mine = params_.hash();
  const auto parts = coll_->all_gather(pack_u64(mine), sync_step_++, MessageTag::kParamHash);
  for (std::size_t r = 0; r < parts.size(); ++r)
    if (unpack_u64(parts[r]) != mine)
      throw SyncError("parameter divergence between rank " + std::to_string(rank_) + " and rank " +
                      std::to_string(r) + " at iteration " + std::to_string(iteration_));
}

IterationReport Trainer::run_iteration() {
  if (iteration_ >= n_iterations_) throw InputError("training already consumed total_timesteps");
  const auto t0 = std::chrono::steady_clock::now();

  IterationReport rep;
  rep.iteration = iteration_;
  rep.timesteps = static_cast<std::uint64_t>(iteration_ + 1) * config_.sampling_batch *
                  static_cast<std::uint64_t>(world_);
  rep.lr = config_.lr_schedule == LrSchedule::kConstant
               ? config_.lr_init
               : config_.lr_init * (1.0 - static_cast<double>(iteration_) /
                                              static_cast<double>(n_iterations_));

  try {
    const nn::ParamSnapshot snapshot = nn::capture(params_);
    rollout::RunningMoments obs_delta(params_.layout.obs_dim);
    rollout::RunningMoments ret_delta(1);
    rollout::RolloutBatch batch =
        collector_->collect(*snapshot, norm_, config_.sampling_batch, obs_delta, ret_delta);
    rollout::compute_gae(batch, config_.gamma, config_.gae_lambda);
    if (config_.normalize_advantage) rollout::normalize_advantages(batch);
    if (config_.dump_batches && !dump_path_.empty()) rollout::dump_jsonl(batch, dump_path_);

    rep.episodes = batch.episode_returns.size();
    rep.mean_episode_return =
        batch.episode_returns.empty()
            ? std::numeric_limits<double>::quiet_NaN()
            : std::accumulate(batch.episode_returns.begin(), batch.episode_returns.end(), 0.0) /
                  static_cast<double>(batch.episode_returns.size());

    const std::size_t m = config_.minibatch_size;
    const std::size_t n_mb = config_.sampling_batch / m;
    const bool per_minibatch = config_.stop_rule.kind != stopping::RuleKind::kNone &&
                               config_.stop_cadence == StopCadence::kMinibatch;
    std::vector<std::size_t> idx(config_.sampling_batch);
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    const auto log_std_slot = params_.layout.slot(nn::NetLayout::kLogStd);
    double prev_delta = 0.0;
    bool stop = false;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config_.max_epochs && !stop; ++epoch) {
      std::shuffle(idx.begin(), idx.end(), shuffle_rng_);
      for (std::size_t k = 0; k < n_mb; ++k) {
        gather_minibatch(batch, std::span<const std::size_t>(idx).subspan(k * m, m));
        objectives::LossAndGrad lg =
            objectives::loss_and_grad(params_, config_.objective, mb_, config_.value_coef);
        if (config_.entropy_coef > 0.0) {
          // Entropy of the state-independent Gaussian is linear in log-std.
          const auto raw = params_.tensor(nn::NetLayout::kLogStd);
          for (std::size_t j = 0; j < raw.size(); ++j)
            if (raw[j] >= nn::kLogStdMin && raw[j] <= nn::kLogStdMax)
              lg.gradient[log_std_slot.offset + j] -= config_.entropy_coef;
        }
        const auto parts = coll_->all_gather(lg.gradient, sync_step_++, MessageTag::kGradient);
        const std::vector<double> gradient = mean_fixed_order(parts);
        adam_.step(params_, gradient, rep.lr);
        ++step;

        nlohmann::json rec;
        if (config_.log_minibatches)
          rec = {{"type", "minibatch"},
                 {"iter", iteration_},
                 {"epoch", epoch},
                 {"minibatch", k},
                 {"step", step},
                 {"policy_loss", lg.breakdown.policy_loss},
                 {"value_loss", lg.breakdown.value_loss},
                 {"penalty", lg.breakdown.penalty_term},
                 {"mean_ratio", lg.breakdown.mean_ratio}};
        if (per_minibatch) {
          double reduced = 0.0;
          stopping::EpochStats s = evaluate_stats(batch, reduced);
          s.epoch_index = static_cast<int>(epoch);
          s.minibatches_done = static_cast<int>(k + 1);
          rep.max_minibatch_delta_increment =
              std::max(rep.max_minibatch_delta_increment, std::abs(s.delta - prev_delta));
          prev_delta = s.delta;
          rep.trail.push_back(s);
          stop = stopping::should_stop(config_.stop_rule, reduced);
          if (config_.log_minibatches) {
            rec["statistic"] = reduced;
            rec["delta"] = s.delta;
            rec["sample_kl"] = s.sample_kl;
            rec["min_log_ratio"] = s.min_log_ratio;
            rec["max_log_ratio"] = s.max_log_ratio;
            rec["stop"] = stop;
          }
        }
        if (config_.log_minibatches) emit(std::move(rec));
        if (stop) break;
      }
      rep.epochs_used = epoch + 1;

      if (!per_minibatch) {
        double reduced = 0.0;
        stopping::EpochStats s = evaluate_stats(batch, reduced);
        s.epoch_index = static_cast<int>(epoch);
        s.minibatches_done = static_cast<int>(n_mb);
        rep.max_minibatch_delta_increment =
            std::max(rep.max_minibatch_delta_increment, std::abs(s.delta - prev_delta));
        prev_delta = s.delta;
        rep.trail.push_back(s);
        stop = stopping::should_stop(config_.stop_rule, reduced);
        nlohmann::json rec = s.to_json();
        rec["type"] = "epoch";
        rec["iter"] = iteration_;
        rec["step"] = step;
        rec["statistic"] = reduced;
        rec["stop"] = stop;
        emit(std::move(rec));
      }
    }

    rep.updates = step;
    rep.stop_triggered = stop;
    if (stop) rep.stop_step = step;
    rep.final_stats = rep.trail.back();

    sync_normalizers(obs_delta, ret_delta);
    check_param_agreement();
    rep.param_hash = params_.hash();
  } catch (const NumericalError& e) {
    rep.failed = true;
    rep.diagnostic = std::string("numerical abort: ") + e.what();
    coll_->abort(rep.diagnostic);
  } catch (const SyncError& e) {
    rep.failed = true;
    rep.diagnostic = std::string("synchronization failure: ") + e.what();
    coll_->abort(rep.diagnostic);
  }

  ++iteration_;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(rep.to_json());
  return rep;
}

TrainResult Trainer::run() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  while (iteration_ < n_iterations_) {
    result.iterations.push_back(run_iteration());
    if (result.iterations.back().failed) {
      result.failed = true;
      result.diagnostic = result.iterations.back().diagnostic;
      break;
    }
  }
  if (!result.failed)
    result.final_eval_return =
        evaluate_policy_rollout(params_, norm_, collector_->env(), config_.eval_episodes,
                                config_.seed + kEvalSeedOffset);
  else
    result.final_eval_return = std::numeric_limits<double>::quiet_NaN();
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

double evaluate_policy_rollout(const nn::MlpParams& params, const rollout::Normalizers& norm,
                               const envs::Env& env_template, std::size_t episodes,
                               std::uint64_t seed) {
  if (episodes == 0) throw InputError("evaluation needs at least one episode");
  auto env = env_template.clone();
  std::mt19937_64 seeds(seed);
  std::vector<double> obs_n(params.layout.obs_dim);
  nn::ForwardPass pass;
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> obs = env->reset(seeds());
    double ret = 0.0;
    for (;;) {
      if (norm.obs_enabled)
        rollout::normalize_obs_into(obs, norm.obs, obs_n);
      else
        obs_n = obs;
      nn::forward_into(params, obs_n, pass);
      const auto mean = pass.mean(0);
      envs::StepResult step = env->step(mean);
      ret += step.reward;
      if (step.terminated || step.truncated) break;
      obs = std::move(step.observation);
    }
    total += ret;
  }
  return total / static_cast<double>(episodes);
}

TrainResult run_training(const TrainConfig& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  JsonlSink sink(out_dir / "metrics.jsonl");
  Trainer trainer(config, nullptr, &sink);
  if (config.dump_batches) {
    std::filesystem::remove(out_dir / "batches.jsonl");
    trainer.set_batch_dump_path(out_dir / "batches.jsonl");
  }
  TrainResult result = trainer.run();

  nn::save_checkpoint(out_dir / "checkpoint", trainer.params(),
                      {{"normalizers", trainer.normalizers().to_json()},
                       {"iterations", trainer.iterations_done()},
                       {"config", config.to_json()}});

  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : result.iterations) {
    nlohmann::json j = it.to_json();
    j["wall_time_s"] = it.wall_time_s;
    iters.push_back(std::move(j));
  }
  const nlohmann::json report{{"config", config.to_json()},
                              {"iterations_run", result.iterations.size()},
                              {"iterations_planned", trainer.total_iterations()},
                              {"failed", result.failed},
                              {"diagnostic", result.diagnostic},
                              {"final_eval_return", nullable(result.final_eval_return)},
                              {"wall_time_s", result.wall_time_s},
                              {"iterations", iters}};
  std::ofstream out(out_dir / "final_report.json");
  out << report.dump(2) << '\n';
  return result;
}

}  // namespace espo
