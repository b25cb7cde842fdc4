// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Exact numerical certification of policy-improvement lower bounds and ratio
// inequalities on random tabular instances.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "espo/tabular_mdp.hpp"

namespace espo::bounds {

/// A >=-form bound passes when slack >= -kSlackTol.
inline constexpr double kSlackTol = 1e-9;
/// Ratio/TV inequalities and the TV identity are checked to this tolerance.
inline constexpr double kRatioTol = 1e-12;

enum class GenMode { kPerturbation, kDirichlet, kRatioBounded };
std::string_view mode_name(GenMode mode);

struct PolicyPairGen {
  GenMode mode = GenMode::kPerturbation;
  double scale = 0.3;  // log-space noise std in perturbation mode
  double m1 = 0.5;     // ratio bounds in ratio-bounded mode
  double m2 = 2.0;
};

struct PolicyPair {
  tabular::TabularPolicy pi;
  tabular::TabularPolicy pi_tilde;
};

/// Both policies respect the default probability floor. Ratio-bounded pairs
/// satisfy m1 <= pi_tilde / pi <= m2 entrywise.
PolicyPair generate_pair(const PolicyPairGen& gen, std::size_t n_states, std::size_t n_actions,
                         std::mt19937_64& rng);

struct BoundReport {
  std::string check;
  std::size_t instance = 0;
  double xi = 0.0;      // max |A_pi|
  double c_coef = 0.0;  // xi * gamma / (1 - gamma)
  double alpha = 0.0;   // max-state TV
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool pass = false;

  nlohmann::json to_json() const;
};

/// max |A_pi(s, a)|, computed from the advantage table and from q - v; throws
/// ConsistencyError if the two disagree beyond 1e-10.
double max_abs_advantage(const tabular::ExactEval& eval, std::size_t n_actions);

/// J(pi_tilde) >= L_pi(pi_tilde) - 4 xi gamma alpha^2 / (1 - gamma)^2.
BoundReport check_theorem1(const tabular::TabularMdp& mdp, const tabular::TabularPolicy& pi,
                           const tabular::TabularPolicy& pi_tilde);

/// J(pi_tilde) - J(pi) >= (1/(1-gamma)) [E r A - C E|r - 1|], C = xi gamma / (1 - gamma).
BoundReport check_theorem2(const tabular::TabularMdp& mdp, const tabular::TabularPolicy& pi,
                           const tabular::TabularPolicy& pi_tilde);

/// TV^max <= min(1/M1 - 1, M2 - 1) with (M1, M2) the measured ratio extrema.
BoundReport check_proposition1(const tabular::TabularPolicy& pi,
                               const tabular::TabularPolicy& pi_tilde);
/// Same inequality with declared bounds; throws InputError unless
/// M1 in (0, 1), M2 > 1 and every ratio lies in [M1, M2].
BoundReport check_proposition1(const tabular::TabularPolicy& pi,
                               const tabular::TabularPolicy& pi_tilde, double m1, double m2);

/// max_s sum_{pi_tilde >= pi} (pi_tilde - pi) == max_s TV(s).
BoundReport check_tv_identity(const tabular::TabularPolicy& pi,
                              const tabular::TabularPolicy& pi_tilde);

/// (E|r - 1|)^2 <= 2 E log(pi / pi_tilde) under d_pi.
BoundReport check_corollary_rd_kl(const tabular::TabularMdp& mdp,
                                  const tabular::TabularPolicy& pi,
                                  const tabular::TabularPolicy& pi_tilde);

struct Instance {
  std::size_t id = 0;
  GenMode mode = GenMode::kPerturbation;
  tabular::TabularMdp mdp;
  PolicyPair pair;
  PolicyPairGen gen;

  nlohmann::json to_json() const;
};

/// Deterministic instance `id` of the ensemble for `seed`: 2-16 states,
/// 2-4 actions, gamma alternating 0.9 / 0.99, generation modes cycling.
Instance make_instance(std::uint64_t seed, std::size_t id);

struct CertificationResult {
  nlohmann::json report;  // deterministic per (seed, n)
  std::size_t failures = 0;
  double wall_time_s = 0.0;
};

/// Runs every check on n instances. Throws InputError when n == 0.
CertificationResult run_certification(std::uint64_t seed, std::size_t n);

}  // namespace espo::bounds
