// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/bound_verifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "espo/error.hpp"

namespace espo::bounds {
namespace {

using tabular::ExactEval;
using tabular::TabularMdp;
using tabular::TabularPolicy;

constexpr double kTwoWayTol = 1e-10;
constexpr double kSurrogateCrossCheckTol = 1e-8;

void check_pair(const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  if (pi.n_states != pi_tilde.n_states || pi.n_actions != pi_tilde.n_actions)
    throw InputError("policy pair shapes differ");
  pi.validate();
  pi_tilde.validate();
}

/// (1/(1-gamma)) sum_s d(s) sum_a (pi_tilde - pi) A. Equal to the surrogate
/// because sum_a pi A = 0; this form is exactly zero at pi_tilde == pi.
double centered_surrogate(const TabularMdp& mdp, const ExactEval& e, const TabularPolicy& pi,
                          const TabularPolicy& pi_tilde) {
  const std::size_t A = mdp.n_actions;
  double total = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    double inner = 0.0;
    for (std::size_t a = 0; a < A; ++a) inner += (pi_tilde(s, a) - pi(s, a)) * e.adv[s * A + a];
    total += e.d_pi[s] * inner;
  }
  total /= (1.0 - mdp.gamma);
  const double reference = tabular::surrogate_exact(mdp, e, pi, pi_tilde);
  if (std::abs(total - reference) > kSurrogateCrossCheckTol * std::max(1.0, std::abs(reference)))
    throw ConsistencyError("surrogate forms disagree");
  return total;
}

double max_state_tv(const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  const auto tv = tabular::state_tv(pi, pi_tilde);
  return *std::max_element(tv.begin(), tv.end());
}

std::pair<double, double> ratio_extrema(const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < pi.probs.size(); ++i) {
    const double r = pi_tilde.probs[i] / pi.probs[i];
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return {lo, hi};
}

BoundReport finish(BoundReport r, bool ge_form) {
  r.slack = ge_form ? r.lhs - r.rhs : r.rhs - r.lhs;
  r.pass = r.slack >= -kSlackTol;
  return r;
}

TabularPolicy normalized_rows(std::vector<double> probs, std::size_t S, std::size_t A) {
  for (std::size_t s = 0; s < S; ++s) {
    double sum = 0.0;
    for (std::size_t a = 0; a < A; ++a) sum += probs[s * A + a];
    for (std::size_t a = 0; a < A; ++a) probs[s * A + a] /= sum;
  }
  return TabularPolicy{S, A, std::move(probs)};
}

bool ratios_within(const TabularPolicy& pi, const TabularPolicy& pt, double m1, double m2) {
  for (std::size_t i = 0; i < pi.probs.size(); ++i) {
    const double r = pt.probs[i] / pi.probs[i];
    if (r < m1 || r > m2) return false;
  }
  return true;
}

}  // namespace

std::string_view mode_name(GenMode mode) {
  switch (mode) {
    case GenMode::kPerturbation: return "perturbation";
    case GenMode::kDirichlet: return "dirichlet";
    case GenMode::kRatioBounded: return "ratio_bounded";
  }
  return "?";
}

PolicyPair generate_pair(const PolicyPairGen& gen, std::size_t n_states, std::size_t n_actions,
                         std::mt19937_64& rng) {
  PolicyPair out;
  out.pi = tabular::random_policy(n_states, n_actions, rng);
  switch (gen.mode) {
    case GenMode::kDirichlet:
      out.pi_tilde = tabular::random_policy(n_states, n_actions, rng);
      break;
    case GenMode::kPerturbation: {
      std::normal_distribution<double> noise(0.0, gen.scale);
      std::vector<double> probs = out.pi.probs;
      for (double& p : probs) p *= std::exp(noise(rng));
      out.pi_tilde = tabular::with_floor(normalized_rows(std::move(probs), n_states, n_actions));
      break;
    }
    case GenMode::kRatioBounded: {
      if (!(gen.m1 > 0.0 && gen.m1 < 1.0 && gen.m2 > 1.0))
        throw InputError("ratio bounds need M1 in (0, 1) and M2 > 1");
      // Log-uniform multiplicative noise spanning the bounds, then rejection.
      std::uniform_real_distribution<double> u(std::log(gen.m1), std::log(gen.m2));
      TabularPolicy candidate;
      bool accepted = false;
      for (int attempt = 0; attempt < 64 && !accepted; ++attempt) {
        std::vector<double> probs = out.pi.probs;
        for (double& p : probs) p *= std::exp(u(rng));
        candidate = normalized_rows(std::move(probs), n_states, n_actions);
        accepted = ratios_within(out.pi, candidate, gen.m1, gen.m2);
      }
      if (!accepted) {
        // Mixing toward pi shrinks every ratio toward 1 until it fits.
        TabularPolicy mixed = candidate;
        for (double t = 0.5; t > 1e-6; t *= 0.5) {
          for (std::size_t i = 0; i < mixed.probs.size(); ++i)
            mixed.probs[i] = (1.0 - t) * out.pi.probs[i] + t * candidate.probs[i];
          if (ratios_within(out.pi, mixed, gen.m1, gen.m2)) break;
        }
        candidate = mixed;
      }
      out.pi_tilde = ratios_within(out.pi, candidate, gen.m1, gen.m2) ? candidate : out.pi;
      break;
    }
  }
  out.pi_tilde.validate(tabular::kDefaultProbabilityFloor * 0.5);
  return out;
}

nlohmann::json BoundReport::to_json() const {
  return {{"check", check}, {"instance", instance}, {"xi", xi},     {"c_coef", c_coef},
          {"alpha", alpha}, {"lhs", lhs},           {"rhs", rhs},   {"slack", slack},
          {"pass", pass}};
}

double max_abs_advantage(const ExactEval& eval, std::size_t n_actions) {
  double from_adv = 0.0;
  double from_qv = 0.0;
  for (std::size_t i = 0; i < eval.adv.size(); ++i) {
    from_adv = std::max(from_adv, std::abs(eval.adv[i]));
    from_qv = std::max(from_qv, std::abs(eval.q[i] - eval.v[i / n_actions]));
  }
  if (std::abs(from_adv - from_qv) > kTwoWayTol) throw ConsistencyError("xi computed two ways disagrees");
  return from_adv;
}

BoundReport check_theorem1(const TabularMdp& mdp, const TabularPolicy& pi,
                           const TabularPolicy& pi_tilde) {
  check_pair(pi, pi_tilde);
  const ExactEval e = tabular::evaluate_policy(mdp, pi);
  const ExactEval et = tabular::evaluate_policy(mdp, pi_tilde);
  const double g = mdp.gamma;
  BoundReport r;
  r.check = "theorem1";
  r.xi = max_abs_advantage(e, mdp.n_actions);
  r.c_coef = r.xi * g / (1.0 - g);
  r.alpha = max_state_tv(pi, pi_tilde);
  // Both sides relative to J(pi) to avoid cancellation on large returns.
  r.lhs = et.j - e.j;
  r.rhs = centered_surrogate(mdp, e, pi, pi_tilde) -
          4.0 * r.xi * g / ((1.0 - g) * (1.0 - g)) * r.alpha * r.alpha;
  return finish(r, true);
}

BoundReport check_theorem2(const TabularMdp& mdp, const TabularPolicy& pi,
                           const TabularPolicy& pi_tilde) {
  check_pair(pi, pi_tilde);
  const ExactEval e = tabular::evaluate_policy(mdp, pi);
  const ExactEval et = tabular::evaluate_policy(mdp, pi_tilde);
  const double g = mdp.gamma;
  BoundReport r;
  r.check = "theorem2";
  r.xi = max_abs_advantage(e, mdp.n_actions);
  r.c_coef = r.xi * g / (1.0 - g);
  r.alpha = max_state_tv(pi, pi_tilde);
  r.lhs = et.j - e.j;
  const double rd = tabular::exact_ratio_deviation(e, pi, pi_tilde);
  r.rhs = centered_surrogate(mdp, e, pi, pi_tilde) - r.c_coef * rd / (1.0 - g);
  return finish(r, true);
}

BoundReport check_proposition1(const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  check_pair(pi, pi_tilde);
  const auto [m1, m2] = ratio_extrema(pi, pi_tilde);
  BoundReport r;
  r.check = "proposition1";
  r.alpha = max_state_tv(pi, pi_tilde);
  r.lhs = r.alpha;
  r.rhs = std::min(1.0 / m1 - 1.0, m2 - 1.0);
  r.slack = r.rhs - r.lhs;
  r.pass = r.slack >= -kRatioTol;
  return r;
}

BoundReport check_proposition1(const TabularPolicy& pi, const TabularPolicy& pi_tilde, double m1,
                               double m2) {
  check_pair(pi, pi_tilde);
  if (!(m1 > 0.0 && m1 < 1.0) || !(m2 > 1.0 && std::isfinite(m2)))
    throw InputError("declared ratio bounds need M1 in (0, 1) and M2 in (1, inf)");
  if (!ratios_within(pi, pi_tilde, m1, m2)) throw InputError("pair violates the declared ratio bounds");
  BoundReport r;
  r.check = "proposition1";
  r.alpha = max_state_tv(pi, pi_tilde);
  r.lhs = r.alpha;
  r.rhs = std::min(1.0 / m1 - 1.0, m2 - 1.0);
  r.slack = r.rhs - r.lhs;
  r.pass = r.slack >= -kRatioTol;
  return r;
}

BoundReport check_tv_identity(const TabularPolicy& pi, const TabularPolicy& pi_tilde) {
  check_pair(pi, pi_tilde);
  double positive_part = 0.0;
  for (std::size_t s = 0; s < pi.n_states; ++s) {
    double sum = 0.0;
    for (std::size_t a = 0; a < pi.n_actions; ++a)
      if (pi_tilde(s, a) >= pi(s, a)) sum += pi_tilde(s, a) - pi(s, a);
    positive_part = std::max(positive_part, sum);
  }
  BoundReport r;
  r.check = "tv_identity";
  r.lhs = positive_part;
  r.rhs = max_state_tv(pi, pi_tilde);
  r.alpha = r.rhs;
  r.slack = -std::abs(r.lhs - r.rhs);
  r.pass = std::abs(r.lhs - r.rhs) <= kRatioTol;
  return r;
}

BoundReport check_corollary_rd_kl(const TabularMdp& mdp, const TabularPolicy& pi,
                                  const TabularPolicy& pi_tilde) {
  check_pair(pi, pi_tilde);
  const ExactEval e = tabular::evaluate_policy(mdp, pi);
  const double rd = tabular::exact_ratio_deviation(e, pi, pi_tilde);
  BoundReport r;
  r.check = "corollary_rd_kl";
  r.alpha = max_state_tv(pi, pi_tilde);
  r.lhs = rd * rd;
  r.rhs = 2.0 * tabular::exact_kl(e, pi, pi_tilde);
  return finish(r, false);
}

nlohmann::json Instance::to_json() const {
  return {{"id", id},
          {"mode", mode_name(mode)},
          {"mdp", tabular::to_json(mdp)},
          {"pi", tabular::to_json(pair.pi)},
          {"pi_tilde", tabular::to_json(pair.pi_tilde)}};
}

Instance make_instance(std::uint64_t seed, std::size_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)};
  std::mt19937_64 rng(seq);
  Instance inst;
  inst.id = id;
  std::uniform_int_distribution<std::size_t> states(2, 16);
  std::uniform_int_distribution<std::size_t> actions(2, 4);
  const std::size_t S = states(rng);
  const std::size_t A = actions(rng);
  const double gamma = id % 2 == 0 ? 0.9 : 0.99;
  inst.mdp = tabular::random_mdp(S, A, gamma, rng);
  inst.mode = static_cast<GenMode>(id % 3);
  inst.gen.mode = inst.mode;
  std::uniform_real_distribution<double> scale(0.01, 1.0);
  inst.gen.scale = scale(rng);
  inst.pair = generate_pair(inst.gen, S, A, rng);
  return inst;
}

CertificationResult run_certification(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw InputError("certification needs at least one instance");
  const auto t0 = std::chrono::steady_clock::now();

  struct Tally {
    std::size_t pass = 0;
    std::size_t total = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    std::size_t worst = 0;
  };
  const char* names[] = {"theorem1", "theorem2", "proposition1", "tv_identity", "corollary_rd_kl"};
  std::map<std::string, Tally> tallies;
  nlohmann::json failures = nlohmann::json::array();
  double global_min_slack = std::numeric_limits<double>::infinity();
  nlohmann::json worst_instance;

  for (std::size_t id = 0; id < n; ++id) {
    const Instance inst = make_instance(seed, id);
    const BoundReport reports[] = {
        check_theorem1(inst.mdp, inst.pair.pi, inst.pair.pi_tilde),
        check_theorem2(inst.mdp, inst.pair.pi, inst.pair.pi_tilde),
        check_proposition1(inst.pair.pi, inst.pair.pi_tilde),
        check_tv_identity(inst.pair.pi, inst.pair.pi_tilde),
        check_corollary_rd_kl(inst.mdp, inst.pair.pi, inst.pair.pi_tilde),
    };
    for (BoundReport r : reports) {
      r.instance = id;
      Tally& t = tallies[r.check];
      ++t.total;
      if (r.pass) ++t.pass;
      if (r.slack < t.min_slack) {
        t.min_slack = r.slack;
        t.worst = id;
      }
      if (r.check != "tv_identity" && r.slack < global_min_slack) {
        global_min_slack = r.slack;
        worst_instance = inst.to_json();
        worst_instance["check"] = r.to_json();
      }
      if (!r.pass) {
        nlohmann::json f = inst.to_json();
        f["check"] = r.to_json();
        failures.push_back(std::move(f));
      }
    }
  }

  nlohmann::json checks = nlohmann::json::object();
  std::size_t n_fail = 0;
  for (const char* name : names) {
    const Tally& t = tallies[name];
    n_fail += t.total - t.pass;
    checks[name] = {{"pass", t.pass},
                    {"total", t.total},
                    {"min_slack", t.min_slack},
                    {"worst_instance", t.worst}};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CertificationResult out;
  out.failures = n_fail;
  out.report = {{"seed", seed},
                {"n_instances", n},
                {"slack_tolerance", kSlackTol},
                {"ratio_tolerance", kRatioTol},
                {"checks", checks},
                {"all_pass", n_fail == 0},
                {"worst_instance", worst_instance},
                {"failures", failures}};
  out.wall_time_s = seconds;
  return out;
}

}  // namespace espo::bounds
