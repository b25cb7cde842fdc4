// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Exact finite-MDP machinery. Everything here is a pure function of its
// arguments; dense direct solves are used throughout because instances stay
// small (tens of states).

#include <cstddef>
#include <random>
#include <vector>

#include <json.hpp>

namespace espo::tabular {

inline constexpr double kDefaultProbabilityFloor = 1e-8;

struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;  // [(s * n_actions + a) * n_states + s']
  std::vector<double> reward;      // [s * n_actions + a]
  std::vector<double> initial_dist;
  double gamma = 0.0;

  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  /// Throws InputError when any structural or stochasticity invariant fails.
  void validate() const;
};

struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;  // [s * n_actions + a]

  double operator()(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);

  /// Rows must be distributions; entries must be >= `floor`.
  void validate(double floor = 0.0) const;
};

/// Mixes the policy with the uniform floor so every entry is >= floor:
/// p' = (1 - A * floor) p + floor.
TabularPolicy with_floor(const TabularPolicy& policy, double floor = kDefaultProbabilityFloor);

struct ExactEval {
  std::vector<double> v;     // per state
  std::vector<double> q;     // [s * n_actions + a]
  std::vector<double> adv;   // q - v
  std::vector<double> d_pi;  // discounted state distribution, sums to 1
  double j = 0.0;            // expected discounted return from p0
};

/// Solves (I - gamma P_pi) v = r_pi and d_pi = (1 - gamma)(I - gamma P_pi^T)^{-1} p0.
/// The return is computed both as p0 . v and from d_pi; a disagreement above
/// 1e-8 raises ConsistencyError.
ExactEval evaluate_policy(const TabularMdp& mdp, const TabularPolicy& policy);

/// J(pi_tilde) - J(pi), cross-checked against the advantage-weighted
/// occupancy form; throws ConsistencyError on disagreement above 1e-8.
double performance_gap(const TabularMdp& mdp, const TabularPolicy& pi,
                       const TabularPolicy& pi_tilde);

/// (1/(1-gamma)) E_{(s,a)~d_pi}[ (pi_tilde/pi) A_pi ], i.e. L_pi(pi_tilde) - J(pi).
double surrogate_exact(const TabularMdp& mdp, const TabularPolicy& pi,
                       const TabularPolicy& pi_tilde);
double surrogate_exact(const TabularMdp& mdp, const ExactEval& eval_pi, const TabularPolicy& pi,
                       const TabularPolicy& pi_tilde);

/// E_{(s,a)~d_pi} |pi_tilde/pi - 1|, cross-checked against sum_s d_pi(s) ||pi_tilde - pi||_1.
double exact_ratio_deviation(const TabularMdp& mdp, const TabularPolicy& pi,
                             const TabularPolicy& pi_tilde);
double exact_ratio_deviation(const ExactEval& eval_pi, const TabularPolicy& pi,
                             const TabularPolicy& pi_tilde);

/// E_{(s,a)~d_pi} log(pi/pi_tilde).
double exact_kl(const TabularMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_tilde);
double exact_kl(const ExactEval& eval_pi, const TabularPolicy& pi, const TabularPolicy& pi_tilde);

/// Total variation per state, 0.5 * sum_a |pi_tilde - pi|.
std::vector<double> state_tv(const TabularPolicy& pi, const TabularPolicy& pi_tilde);

// Random instance generation: Dirichlet(1,...,1) transition rows and initial
// distribution, rewards uniform in [-1, 1].
TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma,
                      std::mt19937_64& rng);
TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, std::mt19937_64& rng,
                            double floor = kDefaultProbabilityFloor);
std::vector<double> sample_dirichlet(std::size_t n, double concentration, std::mt19937_64& rng);

nlohmann::json to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const nlohmann::json& doc);

}  // namespace espo::tabular
