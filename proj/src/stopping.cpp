// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/stopping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "espo/error.hpp"
#include "espo/objectives.hpp"

namespace espo::stopping {
namespace {

void check_inputs(std::span<const double> logp_new, std::span<const double> logp_old) {
  if (logp_new.empty()) throw InputError("ratio statistics need a nonempty batch");
  if (logp_new.size() != logp_old.size()) throw InputError("log-probability arrays are misaligned");
}

double checked_log_ratio(double lp_new, double lp_old) {
  const double lr = lp_new - lp_old;
  if (!(std::abs(lr) <= objectives::kMaxAbsLogRatio))
    throw NumericalError("log ratio " + std::to_string(lr) + " exceeds the overflow limit");
  return lr;
}

}  // namespace

nlohmann::json EpochStats::to_json() const {
  return {{"epoch", epoch_index},
          {"minibatches_done", minibatches_done},
          {"delta", delta},
          {"sample_kl", sample_kl},
          {"min_log_ratio", min_log_ratio},
          {"max_log_ratio", max_log_ratio}};
}

void StopRule::validate() const {
  if (kind != RuleKind::kNone && !(threshold >= 0.0 && std::isfinite(threshold)))
    throw InputError("stop threshold must be finite and non-negative");
}

std::string_view rule_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::kNone: return "none";
    case RuleKind::kRdEs: return "rd_es";
    case RuleKind::kKlEs: return "kl_es";
  }
  return "?";
}

RuleKind parse_rule(std::string_view name) {
  if (name == "none") return RuleKind::kNone;
  if (name == "rd_es") return RuleKind::kRdEs;
  if (name == "kl_es") return RuleKind::kKlEs;
  throw InputError("unknown stop rule '" + std::string(name) + "'");
}

nlohmann::json StopRule::to_json() const {
  return {{"kind", rule_name(kind)}, {"threshold", threshold}};
}

StopRule StopRule::from_json(const nlohmann::json& doc) {
  StopRule r;
  r.kind = parse_rule(doc.at("kind").get<std::string>());
  r.threshold = doc.value("threshold", 0.0);
  r.validate();
  return r;
}

double ratio_deviation(std::span<const double> logp_new, std::span<const double> logp_old) {
  check_inputs(logp_new, logp_old);
  double sum = 0.0;
  for (std::size_t i = 0; i < logp_new.size(); ++i)
    sum += std::abs(std::exp(checked_log_ratio(logp_new[i], logp_old[i])) - 1.0);
  return sum / static_cast<double>(logp_new.size());
}

double sample_kl(std::span<const double> logp_new, std::span<const double> logp_old) {
  check_inputs(logp_new, logp_old);
  double sum = 0.0;
  for (std::size_t i = 0; i < logp_new.size(); ++i) sum += logp_old[i] - logp_new[i];
  return sum / static_cast<double>(logp_new.size());
}

std::pair<double, double> ratio_range(std::span<const double> logp_new,
                                      std::span<const double> logp_old) {
  check_inputs(logp_new, logp_old);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < logp_new.size(); ++i) {
    const double lr = logp_new[i] - logp_old[i];
    lo = std::min(lo, lr);
    hi = std::max(hi, lr);
  }
  return {lo, hi};
}

EpochStats compute_stats(std::span<const double> logp_new, std::span<const double> logp_old) {
  check_inputs(logp_new, logp_old);
  EpochStats s;
  s.min_log_ratio = std::numeric_limits<double>::infinity();
  s.max_log_ratio = -s.min_log_ratio;
  double dev = 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < logp_new.size(); ++i) {
    const double lr = checked_log_ratio(logp_new[i], logp_old[i]);
    dev += std::abs(std::exp(lr) - 1.0);
    kl += logp_old[i] - logp_new[i];
    s.min_log_ratio = std::min(s.min_log_ratio, lr);
    s.max_log_ratio = std::max(s.max_log_ratio, lr);
  }
  const double n = static_cast<double>(logp_new.size());
  s.delta = dev / n;
  s.sample_kl = kl / n;
  return s;
}

double rule_statistic(const StopRule& rule, const EpochStats& stats) {
  switch (rule.kind) {
    case RuleKind::kRdEs: return stats.delta;
    case RuleKind::kKlEs: return stats.sample_kl;
    case RuleKind::kNone: return 0.0;
  }
  return 0.0;
}

bool should_stop(const StopRule& rule, double statistic) {
  if (rule.kind == RuleKind::kNone) return false;
  return statistic > rule.threshold;
}

}  // namespace espo::stopping
