// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Ratio diagnostics over a full sampling batch and the early-stop decision.
// All estimators take per-sample log-probabilities of the current and the
// behavior policy.

#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

namespace espo::stopping {

struct EpochStats {
  double delta = 0.0;  // mean |r - 1|
  double sample_kl = 0.0;  // mean(logp_behavior - logp_current)
  double min_log_ratio = 0.0;
  double max_log_ratio = 0.0;
  int epoch_index = 0;
  int minibatches_done = 0;

  nlohmann::json to_json() const;
};

enum class RuleKind { kNone, kRdEs, kKlEs };

struct StopRule {
  RuleKind kind = RuleKind::kNone;
  double threshold = 0.0;

  static StopRule none() { return {}; }
  static StopRule rd_es(double delta) { return {RuleKind::kRdEs, delta}; }
  static StopRule kl_es(double beta) { return {RuleKind::kKlEs, beta}; }

  /// Negative thresholds are rejected; zero is allowed and stops on the first
  /// update that moves the policy.
  void validate() const;
  nlohmann::json to_json() const;
  static StopRule from_json(const nlohmann::json& doc);
};

std::string_view rule_name(RuleKind kind);
RuleKind parse_rule(std::string_view name);

/// Throws NumericalError when |log r| exceeds the objectives' overflow limit.
double ratio_deviation(std::span<const double> logp_new, std::span<const double> logp_old);
double sample_kl(std::span<const double> logp_new, std::span<const double> logp_old);
std::pair<double, double> ratio_range(std::span<const double> logp_new,
                                      std::span<const double> logp_old);

/// All four statistics in one pass.
EpochStats compute_stats(std::span<const double> logp_new, std::span<const double> logp_old);

/// The statistic the rule thresholds (delta for RdEs, sample_kl for KlEs).
double rule_statistic(const StopRule& rule, const EpochStats& stats);
/// Strict: stop iff statistic > threshold. kNone never stops.
bool should_stop(const StopRule& rule, double statistic);
inline bool should_stop(const StopRule& rule, const EpochStats& stats) {
  return should_stop(rule, rule_statistic(rule, stats));
}

}  // namespace espo::stopping
