#include <doctest.h>

#include <cmath>
#include <random>

#include "espo/error.hpp"
#include "espo/stopping.hpp"
#include "test_util.hpp"

using namespace espo;
using namespace espo::stopping;

TEST_SUITE("stopping") {
  TEST_CASE("ratio deviation hand examples") {
    const std::vector<double> old{0.0, 0.0, 0.0, 0.0};
    const std::vector<double> fresh{std::log(1.5), std::log(0.5), 0.0, std::log(1.2)};
    // |0.5| + |-0.5| + 0 + |0.2| over 4.
    CHECK(ratio_deviation(fresh, old) == doctest::Approx(1.2 / 4.0).epsilon(1e-14));
    CHECK(ratio_deviation(old, old) == 0.0);
    CHECK(sample_kl(old, old) == 0.0);
    const auto [lo, hi] = ratio_range(fresh, old);
    CHECK(lo == doctest::Approx(std::log(0.5)));
    CHECK(hi == doctest::Approx(std::log(1.5)));
  }

  TEST_CASE("sample KL is mean(logp_behavior - logp_current)") {
    const std::vector<double> old{-1.0, -2.0}, fresh{-1.5, -1.0};
    CHECK(sample_kl(fresh, old) == doctest::Approx((0.5 - 1.0) / 2.0));
  }

  TEST_CASE("compute_stats agrees with the individual estimators") {
    std::mt19937_64 rng(41);
    const auto old = espo::testing::random_vector(500, rng);
    auto fresh = old;
    const auto noise = espo::testing::random_vector(500, rng, 0.2);
    for (std::size_t i = 0; i < 500; ++i) fresh[i] += noise[i];
    const EpochStats s = compute_stats(fresh, old);
    CHECK(s.delta == doctest::Approx(ratio_deviation(fresh, old)).epsilon(1e-14));
    CHECK(s.sample_kl == doctest::Approx(sample_kl(fresh, old)).epsilon(1e-14));
    const auto [lo, hi] = ratio_range(fresh, old);
    CHECK(s.min_log_ratio == lo);
    CHECK(s.max_log_ratio == hi);
    CHECK(s.min_log_ratio <= 0.0);
    CHECK(s.max_log_ratio >= 0.0);
  }

  TEST_CASE("stop decision is strict and rule-specific") {
    EpochStats s;
    s.delta = 0.25;
    s.sample_kl = 0.02;
    CHECK_FALSE(should_stop(StopRule::rd_es(0.25), s));
    s.delta = std::nextafter(0.25, 1.0);
    CHECK(should_stop(StopRule::rd_es(0.25), s));
    CHECK(should_stop(StopRule::kl_es(0.01), s));
    CHECK_FALSE(should_stop(StopRule::kl_es(0.05), s));
    s.delta = 1e9;
    CHECK_FALSE(should_stop(StopRule::none(), s));
    CHECK(rule_statistic(StopRule::kl_es(0.01), s) == s.sample_kl);
  }

  TEST_CASE("reduce-min example: one worker below threshold keeps everyone going") {
    // Per-worker contributions (0.3, 0.2, 0.4) with delta 0.25: min 0.2 continues.
    const double reduced = std::min({0.3, 0.2, 0.4});
    CHECK_FALSE(should_stop(StopRule::rd_es(0.25), reduced));
  }

  TEST_CASE("rule validation and names") {
    CHECK_THROWS_AS(StopRule::rd_es(-0.1).validate(), InputError);
    CHECK_NOTHROW(StopRule::rd_es(0.0).validate());
    for (RuleKind k : {RuleKind::kNone, RuleKind::kRdEs, RuleKind::kKlEs}) CHECK(parse_rule(rule_name(k)) == k);
    CHECK_THROWS_AS(parse_rule("tv"), InputError);
    const StopRule r = StopRule::kl_es(0.05);
    const StopRule back = StopRule::from_json(r.to_json());
    CHECK(back.kind == r.kind);
    CHECK(back.threshold == r.threshold);
  }

  TEST_CASE("overflowing log ratios abort") {
    const std::vector<double> old{0.0}, fresh{30.0};
    CHECK_THROWS_AS(ratio_deviation(fresh, old), NumericalError);
    CHECK_THROWS_AS(compute_stats(fresh, old), NumericalError);
  }
}
