// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Policy-update losses (plain surrogate, two clip variants, KL penalty and the
// ratio-deviation penalty) and the shared value loss. Each policy loss is
// written as a function of the per-sample current log-probabilities so that
// the network gradient is one chain-rule step away.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "espo/mlp.hpp"

namespace espo::objectives {

/// Hard abort threshold on |log ratio|.
inline constexpr double kMaxAbsLogRatio = 20.0;

enum class Kind { kSurrogate, kClip, kClipRecip, kKlPenalty, kR2po };

enum class KlDirection {
  kBehaviorFirst,  // mean(logp_behavior - logp_current)
  kReverse,        // mean(r log r), the current-first divergence under behavior samples
};

struct ObjectiveSpec {
  Kind kind = Kind::kSurrogate;
  double clip_epsilon = 0.2;
  double kl_beta = 1.0;
  double r2po_c = 1.0;
  KlDirection kl_direction = KlDirection::kBehaviorFirst;

  /// Throws InputError on out-of-range coefficients.
  void validate() const;
};

/// "surrogate" | "clip" | "clip_recip" | "kl_penalty" | "r2po".
Kind parse_kind(std::string_view name);
std::string_view kind_name(Kind kind);
KlDirection parse_kl_direction(std::string_view name);
std::string_view kl_direction_name(KlDirection dir);

struct LossBreakdown {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double penalty_term = 0.0;
  double mean_ratio = 0.0;
  std::size_t minibatch_size = 0;

  double total(double value_coef = 0.5) const { return policy_loss + value_coef * value_loss; }
};

struct PolicyLoss {
  double loss = 0.0;
  double penalty_term = 0.0;
  double mean_ratio = 0.0;
  std::vector<double> d_logp;  // d loss / d logp_current, per sample
};

/// Throws NumericalError when any |logp_new - logp_old| exceeds 20.
PolicyLoss policy_loss(const ObjectiveSpec& spec, std::span<const double> logp_new,
                       std::span<const double> logp_old, std::span<const double> advantages);

/// Per-sample clipped objective min(r A, clip(r, lo, hi) A).
double clipped_objective(double ratio, double advantage, double lo, double hi);
std::pair<double, double> clip_range(const ObjectiveSpec& spec);

struct ValueLoss {
  double loss = 0.0;
  std::vector<double> d_values;
};
/// 0.5 * mean((v - R)^2).
ValueLoss value_loss(std::span<const double> values, std::span<const double> returns);

/// Contiguous minibatch gathered from a rollout batch.
struct Minibatch {
  std::size_t size = 0;
  std::vector<double> observations;  // size x obs_dim (normalized)
  std::vector<double> actions;       // size x act_dim
  std::vector<double> behavior_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Per-row Gaussian log-probabilities of `actions` under the pass outputs.
std::vector<double> log_probs(const nn::ForwardPass& pass, std::span<const double> actions);

/// Chain rule from per-sample d/dlogp into mean / log-std output gradients.
void accumulate_logp_grad(const nn::ForwardPass& pass, std::span<const double> actions,
                          std::span<const double> d_logp, nn::OutputGrads& grads);

/// Total loss policy + value_coef * value, as a closure for nn::grad. The
/// breakdown of the last evaluation is written to `*breakdown` if non-null.
nn::LossClosure make_loss(const ObjectiveSpec& spec, const Minibatch& mb, double value_coef,
                          LossBreakdown* breakdown = nullptr);

struct LossAndGrad {
  LossBreakdown breakdown;
  std::vector<double> gradient;
};
LossAndGrad loss_and_grad(const nn::MlpParams& params, const ObjectiveSpec& spec,
                          const Minibatch& mb, double value_coef = 0.5);

/// Evaluates the breakdown without back-propagation.
LossBreakdown evaluate(const nn::MlpParams& params, const ObjectiveSpec& spec, const Minibatch& mb,
                       double value_coef = 0.5);

}  // namespace espo::objectives
