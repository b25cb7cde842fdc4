// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/tabular_mdp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "espo/error.hpp"

namespace espo::tabular {
namespace {

constexpr double kStochasticTol = 1e-12;
constexpr double kReturnCrossCheckTol = 1e-8;
constexpr double kRatioCrossCheckTol = 1e-10;

void check_distribution(const double* p, std::size_t n, const char* what, std::size_t row) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p[i] >= 0.0) || !std::isfinite(p[i])) {
      std::ostringstream os;
      os << what << " row " << row << " has a negative or non-finite entry";
      throw InputError(os.str());
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > kStochasticTol) {
    std::ostringstream os;
    os << what << " row " << row << " sums to " << sum;
    throw InputError(os.str());
  }
}

void check_compatible(const TabularMdp& mdp, const TabularPolicy& policy) {
  if (policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions)
    throw InputError("policy shape does not match the MDP");
}

void check_same_shape(const TabularPolicy& a, const TabularPolicy& b) {
  if (a.n_states != b.n_states || a.n_actions != b.n_actions)
    throw InputError("policy shapes differ");
}

void check_floor(const TabularPolicy& policy, const char* name) {
  for (double p : policy.probs) {
    if (!(p >= kDefaultProbabilityFloor)) {
      std::ostringstream os;
      os << name << " has a probability below the floor " << kDefaultProbabilityFloor
         << " (ratio would be unbounded)";
      throw InputError(os.str());
    }
  }
}

Eigen::MatrixXd state_transition(const TabularMdp& mdp, const TabularPolicy& policy) {
  const std::size_t S = mdp.n_states;
  const std::size_t A = mdp.n_actions;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(S, S);  // p(s, s') = sum_a pi(a|s) P(s'|s,a)
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      const double w = policy(s, a);
      if (w == 0.0) continue;
      for (std::size_t t = 0; t < S; ++t) p(s, t) += w * mdp.p(s, a, t);
    }
  return p;
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states == 0 || n_actions == 0) throw InputError("MDP needs at least one state and action");
  if (transition.size() != n_states * n_actions * n_states)
    throw InputError("transition tensor has the wrong size");
  if (reward.size() != n_states * n_actions) throw InputError("reward tensor has the wrong size");
  if (initial_dist.size() != n_states) throw InputError("initial distribution has the wrong size");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("gamma must lie in [0, 1)");
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa)
    check_distribution(transition.data() + sa * n_states, n_states, "transition", sa);
  check_distribution(initial_dist.data(), n_states, "initial distribution", 0);
  for (double r : reward)
    if (!std::isfinite(r)) throw InputError("reward contains a non-finite entry");
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  TabularPolicy pol{n_states, n_actions, {}};
  pol.probs.assign(n_states * n_actions, 1.0 / static_cast<double>(n_actions));
  return pol;
}

void TabularPolicy::validate(double floor) const {
  if (probs.size() != n_states * n_actions) throw InputError("policy tensor has the wrong size");
  for (std::size_t s = 0; s < n_states; ++s)
    check_distribution(probs.data() + s * n_actions, n_actions, "policy", s);
  for (double p : probs)
    if (p < floor) throw InputError("policy entry below the probability floor");
}

TabularPolicy with_floor(const TabularPolicy& policy, double floor) {
  if (floor * static_cast<double>(policy.n_actions) >= 1.0)
    throw InputError("probability floor too large for the action count");
  TabularPolicy out = policy;
  const double scale = 1.0 - static_cast<double>(policy.n_actions) * floor;
  for (double& p : out.probs) p = scale * p + floor;
  return out;
}

ExactEval evaluate_policy(const TabularMdp& mdp, const TabularPolicy& policy) {
  mdp.validate();
  check_compatible(mdp, policy);
  policy.validate();

  const std::size_t S = mdp.n_states;
  const std::size_t A = mdp.n_actions;
  const double g = mdp.gamma;

  const Eigen::MatrixXd p_pi = state_transition(mdp, policy);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(S);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) r_pi(s) += policy(s, a) * mdp.r(s, a);

  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S) - g * p_pi;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  const Eigen::VectorXd v = lu.solve(r_pi);
  const Eigen::Map<const Eigen::VectorXd> p0(mdp.initial_dist.data(), S);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu_t(system.transpose());
  const Eigen::VectorXd d = (1.0 - g) * lu_t.solve(Eigen::VectorXd(p0));
  if (!v.allFinite() || !d.allFinite())
    throw NumericalError("policy evaluation solve produced non-finite values");

  ExactEval out;
  out.v.assign(v.data(), v.data() + S);
  out.d_pi.assign(d.data(), d.data() + S);
  out.q.resize(S * A);
  out.adv.resize(S * A);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      double next = 0.0;
      for (std::size_t t = 0; t < S; ++t) next += mdp.p(s, a, t) * out.v[t];
      const double q = mdp.r(s, a) + g * next;
      out.q[s * A + a] = q;
      out.adv[s * A + a] = q - out.v[s];
    }

  const double j_value = p0.dot(v);
  double j_occupancy = 0.0;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) j_occupancy += out.d_pi[s] * policy(s, a) * mdp.r(s, a);
  j_occupancy /= (1.0 - g);
  if (std::abs(j_value - j_occupancy) > kReturnCrossCheckTol) {
    std::ostringstream os;
    os << "return cross-check failed: p0.v = " << j_value << ", occupancy form = " << j_occupancy;
    throw ConsistencyError(os.str());
  }
  out.j = j_value;
  return out;
}

double performance_gap(const TabularMdp& mdp, const TabularPolicy& pi,
                       const TabularPolicy& pi_tilde) {
  const ExactEval e = evaluate_policy(mdp, pi);
  const ExactEval et = evaluate_policy(mdp, pi_tilde);
  const double direct = et.j - e.j;

  const std::size_t A = mdp.n_actions;
  double identity = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    double inner = 0.0;
    for (std::size_t a = 0; a < A; ++a) inner += pi_tilde(s, a) * e.adv[s * A + a];
    identity += et.d_pi[s] * inner;
  }
  identity /= (1.0 - mdp.gamma);
  if (std::abs(direct - identity) > kReturnCrossCheckTol) {
    std::ostringstream os;
    os << "performance gap cross-check failed: direct = " << direct
       << ", advantage form = " << identity;
    throw ConsistencyError(os.str());
  }
  return direct;
}

double surrogate_exact(const TabularMdp& mdp, const ExactEval& eval_pi, const TabularPolicy& pi,
                       const TabularPolicy& pi_tilde) {
  check_same_shape(pi, pi_tilde);
  check_floor(pi, "behavior policy");
  const std::size_t A = pi.n_actions;
  double total = 0.0;
  for (std::size_t s = 0; s < pi.n_states; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      const double ratio = pi_tilde(s, a) / pi(s, a);
      total += eval_pi.d_pi[s] * pi(s, a) * ratio * eval_pi.adv[s * A + a];
    }
  return total / (1.0 - mdp.gamma);
}

double surrogate_exact(const TabularMdp& mdp, const TabularPolicy& pi,
                       const TabularPolicy& pi_tilde) {
  return surrogate_exact(mdp, evaluate_policy(mdp, pi), pi, pi_tilde);
}

double exact_ratio_deviation(const ExactEval& eval_pi, const TabularPolicy& pi,
                             const TabularPolicy& pi_tilde) {
  check_same_shape(pi, pi_tilde);
  check_floor(pi, "behavior policy");
  const std::size_t A = pi.n_actions;
  double by_ratio = 0.0;
  double by_l1 = 0.0;
  for (std::size_t s = 0; s < pi.n_states; ++s) {
    double l1 = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      by_ratio += eval_pi.d_pi[s] * pi(s, a) * std::abs(pi_tilde(s, a) / pi(s, a) - 1.0);
      l1 += std::abs(pi_tilde(s, a) - pi(s, a));
    }
    by_l1 += eval_pi.d_pi[s] * l1;
  }
  if (std::abs(by_ratio - by_l1) > kRatioCrossCheckTol) {
    std::ostringstream os;
    os << "ratio deviation cross-check failed: " << by_ratio << " vs " << by_l1;
    throw ConsistencyError(os.str());
  }
  return by_ratio;
}

double exact_ratio_deviation(const TabularMdp& mdp, const TabularPolicy& pi,
                             const TabularPolicy& pi_tilde) {
  return exact_ratio_deviation(evaluate_policy(mdp, pi), pi, pi_tilde);
}

double exact_kl(const ExactEval& eval_pi, const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  check_same_shape(pi, pi_tilde);
  check_floor(pi, "behavior policy");
  check_floor(pi_tilde, "target policy");
  const std::size_t A = pi.n_actions;
  double total = 0.0;
  for (std::size_t s = 0; s < pi.n_states; ++s)
    for (std::size_t a = 0; a < A; ++a)
      total += eval_pi.d_pi[s] * pi(s, a) * std::log(pi(s, a) / pi_tilde(s, a));
  return total;
}

double exact_kl(const TabularMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  return exact_kl(evaluate_policy(mdp, pi), pi, pi_tilde);
}

std::vector<double> state_tv(const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  check_same_shape(pi, pi_tilde);
  std::vector<double> tv(pi.n_states, 0.0);
  for (std::size_t s = 0; s < pi.n_states; ++s) {
    double l1 = 0.0;
    for (std::size_t a = 0; a < pi.n_actions; ++a) l1 += std::abs(pi_tilde(s, a) - pi(s, a));
    tv[s] = 0.5 * l1;
  }
  return tv;
}

std::vector<double> sample_dirichlet(std::size_t n, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma_dist(concentration, 1.0);
  std::vector<double> out(n);
  double sum = 0.0;
  for (double& x : out) {
    x = gamma_dist(rng);
    sum += x;
  }
  if (!(sum > 0.0)) {
    // All draws underflowed; fall back to uniform.
    for (double& x : out) x = 1.0 / static_cast<double>(n);
    return out;
  }
  for (double& x : out) x /= sum;
  return out;
}

TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma,
                      std::mt19937_64& rng) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.transition.reserve(n_states * n_actions * n_states);
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa) {
    const auto row = sample_dirichlet(n_states, 1.0, rng);
    mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
  }
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  mdp.reward.resize(n_states * n_actions);
  for (double& r : mdp.reward) r = unif(rng);
  mdp.initial_dist = sample_dirichlet(n_states, 1.0, rng);
  mdp.validate();
  return mdp;
}

TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, std::mt19937_64& rng,
                            double floor) {
  TabularPolicy pol{n_states, n_actions, {}};
  pol.probs.reserve(n_states * n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    const auto row = sample_dirichlet(n_actions, 1.0, rng);
    pol.probs.insert(pol.probs.end(), row.begin(), row.end());
  }
  return floor > 0.0 ? with_floor(pol, floor) : pol;
}

nlohmann::json to_json(const TabularMdp& mdp) {
  nlohmann::json transition = nlohmann::json::array();
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const auto* row = mdp.transition.data() + (s * mdp.n_actions + a) * mdp.n_states;
      per_action.push_back(std::vector<double>(row, row + mdp.n_states));
    }
    transition.push_back(std::move(per_action));
  }
  nlohmann::json reward = nlohmann::json::array();
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    const auto* row = mdp.reward.data() + s * mdp.n_actions;
    reward.push_back(std::vector<double>(row, row + mdp.n_actions));
  }
  return {{"n_states", mdp.n_states}, {"n_actions", mdp.n_actions},
          {"transition", transition}, {"reward", reward},
          {"initial_dist", mdp.initial_dist}, {"gamma", mdp.gamma}};
}

TabularMdp mdp_from_json(const nlohmann::json& doc) {
  try {
    TabularMdp mdp;
    mdp.n_states = doc.at("n_states").get<std::size_t>();
    mdp.n_actions = doc.at("n_actions").get<std::size_t>();
    mdp.gamma = doc.at("gamma").get<double>();
    mdp.initial_dist = doc.at("initial_dist").get<std::vector<double>>();
    const auto& tr = doc.at("transition");
    const auto& rw = doc.at("reward");
    if (tr.size() != mdp.n_states || rw.size() != mdp.n_states)
      throw InputError("MDP document has mismatched state counts");
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      if (tr[s].size() != mdp.n_actions) throw InputError("MDP document has mismatched action counts");
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        const auto row = tr[s][a].get<std::vector<double>>();
        mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
      }
      const auto rrow = rw[s].get<std::vector<double>>();
      mdp.reward.insert(mdp.reward.end(), rrow.begin(), rrow.end());
    }
    mdp.validate();
    return mdp;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed MDP document: ") + e.what());
  }
}

nlohmann::json to_json(const TabularPolicy& policy) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t s = 0; s < policy.n_states; ++s) {
    const auto* row = policy.probs.data() + s * policy.n_actions;
    rows.push_back(std::vector<double>(row, row + policy.n_actions));
  }
  return {{"n_states", policy.n_states}, {"n_actions", policy.n_actions}, {"probs", rows}};
}

TabularPolicy policy_from_json(const nlohmann::json& doc) {
  try {
    TabularPolicy pol;
    pol.n_states = doc.at("n_states").get<std::size_t>();
    pol.n_actions = doc.at("n_actions").get<std::size_t>();
    for (const auto& row : doc.at("probs")) {
      const auto r = row.get<std::vector<double>>();
      pol.probs.insert(pol.probs.end(), r.begin(), r.end());
    }
    pol.validate();
    return pol;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed policy document: ") + e.what());
  }
}

}  // namespace espo::tabular
