// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "espo/error.hpp"

namespace espo::objectives {

void ObjectiveSpec::validate() const {
  if (kind == Kind::kClip || kind == Kind::kClipRecip)
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw InputError("clip epsilon must lie in (0, 1)");
  if (kind == Kind::kKlPenalty && !(kl_beta > 0.0)) throw InputError("KL penalty beta must be positive");
  if (kind == Kind::kR2po && !(r2po_c > 0.0)) throw InputError("ratio penalty coefficient must be positive");
}

Kind parse_kind(std::string_view name) {
  if (name == "surrogate") return Kind::kSurrogate;
  if (name == "clip") return Kind::kClip;
  if (name == "clip_recip") return Kind::kClipRecip;
  if (name == "kl_penalty") return Kind::kKlPenalty;
  if (name == "r2po") return Kind::kR2po;
  throw InputError("unknown objective '" + std::string(name) + "'");
}

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::kSurrogate: return "surrogate";
    case Kind::kClip: return "clip";
    case Kind::kClipRecip: return "clip_recip";
    case Kind::kKlPenalty: return "kl_penalty";
    case Kind::kR2po: return "r2po";
  }
  return "?";
}

KlDirection parse_kl_direction(std::string_view name) {
  if (name == "behavior_first") return KlDirection::kBehaviorFirst;
  if (name == "reverse") return KlDirection::kReverse;
  throw InputError("unknown KL direction '" + std::string(name) + "'");
}

std::string_view kl_direction_name(KlDirection dir) {
  return dir == KlDirection::kBehaviorFirst ? "behavior_first" : "reverse";
}

std::pair<double, double> clip_range(const ObjectiveSpec& spec) {
  const double hi = 1.0 + spec.clip_epsilon;
  const double lo = spec.kind == Kind::kClipRecip ? 1.0 / hi : 1.0 - spec.clip_epsilon;
  return {lo, hi};
}

double clipped_objective(double ratio, double advantage, double lo, double hi) {
  return std::min(ratio * advantage, std::clamp(ratio, lo, hi) * advantage);
}

PolicyLoss policy_loss(const ObjectiveSpec& spec, std::span<const double> logp_new,
                       std::span<const double> logp_old, std::span<const double> advantages) {
  const std::size_t m = logp_new.size();
  if (m == 0) throw InputError("empty minibatch");
  if (logp_old.size() != m || advantages.size() != m) throw InputError("minibatch arrays are misaligned");

  PolicyLoss out;
  out.d_logp.assign(m, 0.0);
  const double inv_m = 1.0 / static_cast<double>(m);
  const auto [lo, hi] = clip_range(spec);
  double objective = 0.0;
  double penalty = 0.0;
  double ratio_sum = 0.0;

  for (std::size_t i = 0; i < m; ++i) {
    const double log_r = logp_new[i] - logp_old[i];
    if (!(std::abs(log_r) <= kMaxAbsLogRatio))
      throw NumericalError("log ratio " + std::to_string(log_r) + " exceeds the overflow limit");
    const double r = std::exp(log_r);
    const double a = advantages[i];
    ratio_sum += r;
    double d = -r * a;  // d(-r A)/d logp
    switch (spec.kind) {
      case Kind::kSurrogate:
        objective += r * a;
        break;
      case Kind::kClip:
      case Kind::kClipRecip: {
        const double unclipped = r * a;
        const double clipped = std::clamp(r, lo, hi) * a;
        if (unclipped <= clipped) {
          objective += unclipped;
        } else {
          objective += clipped;
          d = 0.0;
        }
        break;
      }
      case Kind::kKlPenalty:
        objective += r * a;
        if (spec.kl_direction == KlDirection::kBehaviorFirst) {
          penalty += -log_r;
          d += -spec.kl_beta;
        } else {
          penalty += r * log_r;
          d += spec.kl_beta * r * (log_r + 1.0);
        }
        break;
      case Kind::kR2po: {
        objective += r * a;
        const double dev = r - 1.0;
        penalty += std::abs(dev);
        const double sign = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
        d += spec.r2po_c * sign * r;
        break;
      }
    }
    out.d_logp[i] = d * inv_m;
  }

  out.mean_ratio = ratio_sum * inv_m;
  out.penalty_term = penalty * inv_m;
  out.loss = -objective * inv_m;
  if (spec.kind == Kind::kKlPenalty) out.loss += spec.kl_beta * out.penalty_term;
  if (spec.kind == Kind::kR2po) out.loss += spec.r2po_c * out.penalty_term;
  if (!std::isfinite(out.loss)) throw NumericalError("policy loss is not finite");
  return out;
}

ValueLoss value_loss(std::span<const double> values, std::span<const double> returns) {
  const std::size_t m = values.size();
  if (m == 0 || returns.size() != m) throw InputError("value loss arrays are empty or misaligned");
  ValueLoss out;
  out.d_values.resize(m);
  const double inv_m = 1.0 / static_cast<double>(m);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = values[i] - returns[i];
    sum += e * e;
    out.d_values[i] = e * inv_m;
  }
  out.loss = 0.5 * sum * inv_m;
  return out;
}

std::vector<double> log_probs(const nn::ForwardPass& pass, std::span<const double> actions) {
  const std::size_t ad = pass.act_dim;
  if (actions.size() != pass.rows * ad) throw InputError("actions do not match the forward pass");
  std::vector<double> out(pass.rows);
  for (std::size_t r = 0; r < pass.rows; ++r)
    out[r] = nn::log_prob(pass.mean(r), pass.log_std, actions.subspan(r * ad, ad));
  return out;
}

void accumulate_logp_grad(const nn::ForwardPass& pass, std::span<const double> actions,
                          std::span<const double> d_logp, nn::OutputGrads& grads) {
  const std::size_t ad = pass.act_dim;
  std::vector<double> inv_std(ad);
  for (std::size_t j = 0; j < ad; ++j) inv_std[j] = std::exp(-pass.log_std[j]);
  for (std::size_t r = 0; r < pass.rows; ++r) {
    if (d_logp[r] == 0.0) continue;
    const auto mean = pass.mean(r);
    for (std::size_t j = 0; j < ad; ++j) {
      const double z = (actions[r * ad + j] - mean[j]) * inv_std[j];
      grads.d_mean[r * ad + j] += d_logp[r] * z * inv_std[j];
      grads.d_log_std[j] += d_logp[r] * (z * z - 1.0);
    }
  }
}

nn::LossClosure make_loss(const ObjectiveSpec& spec, const Minibatch& mb, double value_coef,
                          LossBreakdown* breakdown) {
  spec.validate();
  return [&spec, &mb, value_coef, breakdown](const nn::MlpParams&, const nn::ForwardPass& pass) {
    if (pass.rows != mb.size) throw InputError("forward pass does not match the minibatch");
    const std::vector<double> logp = log_probs(pass, mb.actions);
    const PolicyLoss pl = policy_loss(spec, logp, mb.behavior_log_probs, mb.advantages);
    std::vector<double> values(mb.size);
    for (std::size_t r = 0; r < mb.size; ++r) values[r] = pass.value(r);
    const ValueLoss vl = value_loss(values, mb.returns);

    nn::LossValue out;
    out.grads = nn::OutputGrads::zeros(pass);
    accumulate_logp_grad(pass, mb.actions, pl.d_logp, out.grads);
    for (std::size_t r = 0; r < mb.size; ++r) out.grads.d_value[r] = value_coef * vl.d_values[r];
    out.loss = pl.loss + value_coef * vl.loss;
    if (breakdown) *breakdown = LossBreakdown{pl.loss, vl.loss, pl.penalty_term, pl.mean_ratio, mb.size};
    return out;
  };
}

LossAndGrad loss_and_grad(const nn::MlpParams& params, const ObjectiveSpec& spec,
                          const Minibatch& mb, double value_coef) {
  LossAndGrad out;
  nn::LossAndGradient lg = nn::grad(params, mb.observations, make_loss(spec, mb, value_coef, &out.breakdown));
  out.gradient = std::move(lg.gradient);
  return out;
}

LossBreakdown evaluate(const nn::MlpParams& params, const ObjectiveSpec& spec, const Minibatch& mb,
                       double value_coef) {
  LossBreakdown out;
  const nn::ForwardPass pass = nn::forward(params, mb.observations);
  make_loss(spec, mb, value_coef, &out)(params, pass);
  return out;
}

}  // namespace espo::objectives
