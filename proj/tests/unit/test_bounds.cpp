#include <doctest.h>

#include <cmath>
#include <random>

#include "espo/bound_verifier.hpp"
#include "espo/error.hpp"
#include "espo/tabular_mdp.hpp"

using namespace espo;
using namespace espo::bounds;
using espo::tabular::TabularMdp;
using espo::tabular::TabularPolicy;

namespace {

// Oracle by fixed-point iteration: v, A = q - v and the discounted state
// distribution, none of them sharing code with the direct solver.
struct Iterated {
  std::vector<double> v, adv, d;
};

Iterated iterate(const TabularMdp& m, const TabularPolicy& pi) {
  const std::size_t S = m.n_states, A = m.n_actions;
  Iterated out;
  out.v.assign(S, 0.0);
  const int sweeps = static_cast<int>(std::ceil(std::log(1e-15) / std::log(m.gamma))) + 50;
  for (int it = 0; it < sweeps; ++it) {
    std::vector<double> nv(S, 0.0);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        double q = m.r(s, a);
        for (std::size_t s2 = 0; s2 < S; ++s2) q += m.gamma * m.p(s, a, s2) * out.v[s2];
        nv[s] += pi(s, a) * q;
      }
    out.v = nv;
  }
  out.adv.assign(S * A, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      double q = m.r(s, a);
      for (std::size_t s2 = 0; s2 < S; ++s2) q += m.gamma * m.p(s, a, s2) * out.v[s2];
      out.adv[s * A + a] = q - out.v[s];
    }
  // d = (1 - gamma) sum_t gamma^t p_t.
  out.d.assign(S, 0.0);
  std::vector<double> pt = m.initial_dist;
  double w = 1.0 - m.gamma;
  for (int t = 0; t < sweeps; ++t, w *= m.gamma) {
    std::vector<double> next(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      out.d[s] += w * pt[s];
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t s2 = 0; s2 < S; ++s2) next[s2] += pt[s] * pi(s, a) * m.p(s, a, s2);
    }
    pt = next;
  }
  return out;
}

double j_of(const TabularMdp& m, const Iterated& it) {
  double j = 0.0;
  for (std::size_t s = 0; s < m.n_states; ++s) j += m.initial_dist[s] * it.v[s];
  return j;
}

TabularPolicy one_state(std::vector<double> probs) {
  TabularPolicy p;
  p.n_states = 1;
  p.n_actions = probs.size();
  p.probs = std::move(probs);
  return p;
}

TabularMdp one_state_mdp(std::size_t A) {
  TabularMdp m;
  m.n_states = 1;
  m.n_actions = A;
  m.transition.assign(A, 1.0);
  m.reward.assign(A, 0.0);
  for (std::size_t a = 0; a < A; ++a) m.reward[a] = static_cast<double>(a);
  m.initial_dist = {1.0};
  m.gamma = 0.9;
  return m;
}

}  // namespace

TEST_SUITE("bounds") {
  TEST_CASE("both sides of the improvement bounds match an iterative oracle") {
    for (std::size_t id = 0; id < 12; ++id) {
      const Instance inst = make_instance(3, id);
      const auto& m = inst.mdp;
      const auto& pi = inst.pair.pi;
      const auto& pt = inst.pair.pi_tilde;
      const Iterated e = iterate(m, pi), et = iterate(m, pt);
      const std::size_t S = m.n_states, A = m.n_actions;
      double xi = 0.0, ra = 0.0, rd = 0.0, alpha = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        double tv = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
          xi = std::max(xi, std::abs(e.adv[s * A + a]));
          ra += e.d[s] * pt(s, a) * e.adv[s * A + a];
          rd += e.d[s] * std::abs(pt(s, a) - pi(s, a));
          tv += 0.5 * std::abs(pt(s, a) - pi(s, a));
        }
        alpha = std::max(alpha, tv);
      }
      const double g = m.gamma;
      const double gap = j_of(m, et) - j_of(m, e);
      const double scale = std::max(1.0, std::abs(j_of(m, e)));
      CAPTURE(id);

      const BoundReport t2 = check_theorem2(m, pi, pt);
      CHECK(t2.lhs == doctest::Approx(gap).epsilon(1e-9).scale(scale));
      CHECK(t2.xi == doctest::Approx(xi).epsilon(1e-9));
      CHECK(t2.c_coef == doctest::Approx(xi * g / (1 - g)).epsilon(1e-9));
      CHECK(t2.rhs == doctest::Approx((ra - xi * g / (1 - g) * rd) / (1 - g)).epsilon(1e-8).scale(scale));
      CHECK(t2.pass);
      CHECK(t2.slack >= -kSlackTol);

      const BoundReport t1 = check_theorem1(m, pi, pt);
      CHECK(t1.alpha == doctest::Approx(alpha).epsilon(1e-12));
      CHECK(t1.rhs == doctest::Approx(ra / (1 - g) - 4 * xi * g * alpha * alpha / ((1 - g) * (1 - g)))
                          .epsilon(1e-8)
                          .scale(scale));
      CHECK(t1.pass);

      const BoundReport c = check_corollary_rd_kl(m, pi, pt);
      double kl = 0.0;
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) kl += e.d[s] * pi(s, a) * std::log(pi(s, a) / pt(s, a));
      CHECK(c.lhs == doctest::Approx(rd * rd).epsilon(1e-9));
      CHECK(c.rhs == doctest::Approx(2 * kl).epsilon(1e-9));
      CHECK(c.pass);
    }
  }

  TEST_CASE("identical policies give zero slack on the improvement bounds") {
    const Instance inst = make_instance(1, 4);
    const auto& pi = inst.pair.pi;
    for (const BoundReport& r : {check_theorem1(inst.mdp, pi, pi), check_theorem2(inst.mdp, pi, pi),
                                 check_corollary_rd_kl(inst.mdp, pi, pi)}) {
      CHECK(std::abs(r.lhs) <= 1e-12);
      CHECK(std::abs(r.rhs) <= 1e-12);
      CHECK(std::abs(r.slack) <= 1e-12);
      CHECK(r.pass);
    }
    CHECK(check_tv_identity(pi, pi).lhs == 0.0);
  }

  TEST_CASE("single-state TV and ratio example") {
    const auto pi = one_state({0.7, 0.3});
    const auto pt = one_state({0.4, 0.6});
    const BoundReport tv = check_tv_identity(pi, pt);
    CHECK(tv.lhs == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(tv.rhs == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(tv.pass);
    const BoundReport p1 = check_proposition1(pi, pt);
    // M1 = 4/7, M2 = 2: min(7/4 - 1, 1) = 0.75.
    CHECK(p1.lhs == doctest::Approx(0.3));
    CHECK(p1.rhs == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(p1.pass);
    const BoundReport declared = check_proposition1(pi, pt, 0.5, 2.5);
    CHECK(declared.rhs == doctest::Approx(1.0));
  }

  TEST_CASE("ratio deviation and KL example") {
    const TabularMdp m = one_state_mdp(2);
    const auto pi = one_state({0.5, 0.5});
    const auto pt = one_state({0.75, 0.25});
    const BoundReport c = check_corollary_rd_kl(m, pi, pt);
    CHECK(c.lhs == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(c.rhs == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-14));
    CHECK(c.slack == doctest::Approx(std::log(4.0 / 3.0) - 0.25).epsilon(1e-12));
    CHECK(c.pass);
  }

  TEST_CASE("declared ratio bounds are validated") {
    const auto pi = one_state({0.7, 0.3});
    const auto pt = one_state({0.4, 0.6});
    CHECK_THROWS_AS(check_proposition1(pi, pt, 0.0, 2.0), InputError);
    CHECK_THROWS_AS(check_proposition1(pi, pt, 0.5, 1.0), InputError);
    CHECK_THROWS_AS(check_proposition1(pi, pt, 0.5, 1.5), InputError);  // ratio 2 exceeds M2
    CHECK_THROWS_AS(check_proposition1(pi, pt, 0.6, 2.5), InputError);  // ratio 4/7 below M1
    CHECK_THROWS_AS(check_proposition1(pi, one_state({0.2, 0.3, 0.5})), InputError);
  }

  TEST_CASE("ratio-bounded generation respects its bounds") {
    std::mt19937_64 rng(8);
    PolicyPairGen gen;
    gen.mode = GenMode::kRatioBounded;
    gen.m1 = 0.8;
    gen.m2 = 1.25;
    for (int i = 0; i < 50; ++i) {
      const PolicyPair pp = generate_pair(gen, 6, 3, rng);
      for (std::size_t k = 0; k < pp.pi.probs.size(); ++k) {
        const double r = pp.pi_tilde.probs[k] / pp.pi.probs[k];
        CHECK(r >= 0.8 - 1e-12);
        CHECK(r <= 1.25 + 1e-12);
      }
      CHECK(check_proposition1(pp.pi, pp.pi_tilde, 0.8, 1.25).pass);
    }
    gen.m1 = 1.2;
    CHECK_THROWS_AS(generate_pair(gen, 2, 2, rng), InputError);
  }

  TEST_CASE("max advantage is computed two ways") {
    const Instance inst = make_instance(2, 5);
    tabular::ExactEval e = tabular::evaluate_policy(inst.mdp, inst.pair.pi);
    CHECK(max_abs_advantage(e, inst.mdp.n_actions) > 0.0);
    e.adv[0] = 100.0;  // no longer q - v
    CHECK_THROWS_AS(max_abs_advantage(e, inst.mdp.n_actions), ConsistencyError);
  }

  TEST_CASE("instances cover the documented ranges") {
    for (std::size_t id = 0; id < 60; ++id) {
      const Instance inst = make_instance(0, id);
      CHECK(inst.mdp.n_states >= 2);
      CHECK(inst.mdp.n_states <= 16);
      CHECK(inst.mdp.n_actions >= 2);
      CHECK(inst.mdp.n_actions <= 4);
      CHECK(inst.mdp.gamma == (id % 2 == 0 ? 0.9 : 0.99));
      CHECK_NOTHROW(inst.mdp.validate());
      CHECK_NOTHROW(inst.pair.pi_tilde.validate(0.5 * tabular::kDefaultProbabilityFloor));
    }
  }

  TEST_CASE("certification is deterministic and rejects an empty run") {
    const auto a = run_certification(11, 40);
    const auto b = run_certification(11, 40);
    CHECK(a.report == b.report);
    CHECK(a.failures == 0);
    CHECK(a.report.at("all_pass") == true);
    for (const char* name : {"theorem1", "theorem2", "proposition1", "tv_identity", "corollary_rd_kl"})
      CHECK(a.report.at("checks").at(name).at("total") == 40);
    CHECK(run_certification(12, 40).report != a.report);
    CHECK_THROWS_AS(run_certification(0, 0), InputError);
  }
}
