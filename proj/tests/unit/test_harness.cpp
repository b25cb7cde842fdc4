#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "espo/error.hpp"
#include "espo/harness.hpp"
#include "test_util.hpp"

using namespace espo;
using namespace espo::harness;

namespace {

// Writes a metrics stream with the given iteration records.
void write_metrics(const std::filesystem::path& path, const std::vector<std::pair<double, double>>& points,
                   double delta = 0.1) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  std::size_t i = 0;
  for (const auto& [t, r] : points) {
    out << nlohmann::json{{"type", "minibatch"}, {"iter", i}}.dump() << '\n';
    out << nlohmann::json{{"type", "iteration"},  {"iter", i},           {"timesteps", t},
                          {"mean_episode_return", r}, {"delta", delta}, {"sample_kl", 0.01},
                          {"max_log_ratio", 0.5},  {"failed", false}}
               .dump()
        << '\n';
    ++i;
  }
}

ExperimentMatrix tiny_matrix() {
  ExperimentMatrix m = builtin_matrix("threshold_sweep", 2048, 2, "point_mass");
  m.cells.resize(2);
  for (auto& c : m.cells) {
    c.config.total_timesteps = 512;
    c.config.sampling_batch = 256;
    c.config.hidden = {8, 8};
    c.config.eval_episodes = 1;
  }
  return m;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("built-in presets are valid and complete") {
    for (const auto& name : preset_names()) {
      const ExperimentMatrix m = builtin_matrix(name, 100000, 3);
      CHECK_NOTHROW(m.validate());
      CHECK(m.seeds == 3);
      for (const auto& c : m.cells) {
        CHECK(c.config.total_timesteps == 100000);
        CHECK(c.config.env == "pendulum");
      }
    }
    const auto ppo = builtin_matrix("espo_vs_ppo", 100000, 5);
    CHECK(ppo.cells.size() == 4);
    const auto sweep = builtin_matrix("threshold_sweep", 100000, 5, "point_mass");
    bool has_default = false;
    for (const auto& c : sweep.cells) {
      CHECK(c.config.env == "point_mass");
      has_default = has_default || (c.config.stop_rule.kind == stopping::RuleKind::kRdEs &&
                                    c.config.stop_rule.threshold == 0.25);
    }
    CHECK(has_default);
    CHECK_THROWS_WITH_AS(builtin_matrix("bogus", 1000, 1), doctest::Contains("espo_vs_ppo"), InputError);
  }

  TEST_CASE("matrix validation rejects duplicate labels and mixed budgets") {
    ExperimentMatrix m = builtin_matrix("rd_vs_kl", 100000, 2);
    m.cells[1].label = m.cells[0].label;
    CHECK_THROWS_AS(m.validate(), InputError);
    m = builtin_matrix("rd_vs_kl", 100000, 2);
    m.cells[1].config.total_timesteps = 50000;
    CHECK_THROWS_AS(m.validate(), InputError);
    m = builtin_matrix("rd_vs_kl", 100000, 2);
    m.seeds = 0;
    CHECK_THROWS_AS(m.validate(), InputError);
    m.seeds = 3;
    CHECK(m.seed_for(2) == 2);
    m.same_seed = true;
    CHECK(m.seed_for(2) == 0);
  }

  TEST_CASE("interpolation is piecewise linear and clamped") {
    const std::vector<double> xs{0.0, 10.0, 20.0}, ys{1.0, 3.0, -1.0};
    CHECK(interpolate(xs, ys, 5.0) == doctest::Approx(2.0));
    CHECK(interpolate(xs, ys, 15.0) == doctest::Approx(1.0));
    CHECK(interpolate(xs, ys, 10.0) == 3.0);
    CHECK(interpolate(xs, ys, -5.0) == 1.0);
    CHECK(interpolate(xs, ys, 25.0) == -1.0);
    CHECK(interpolate({4.0}, {7.0}, 100.0) == 7.0);
  }

  TEST_CASE("a single run aggregates to itself with zero spread") {
    const auto dir = espo::testing::scratch_dir("agg_single");
    write_metrics(dir / "a.jsonl", {{100, -5.0}, {200, -3.0}, {300, -1.0}});
    const auto rows = aggregate({{"only", {dir / "a.jsonl"}}}, 5);
    REQUIRE(rows.size() == 5);
    CHECK(rows.front().timestep == 100.0);
    CHECK(rows.back().timestep == 300.0);
    for (const auto& r : rows) {
      CHECK(r.return_mean == doctest::Approx(-5.0 + 2.0 * (r.timestep - 100.0) / 100.0));
      CHECK(r.return_std == 0.0);
      CHECK(r.delta_mean == doctest::Approx(0.1));
    }
  }

  TEST_CASE("aggregation uses the common grid and the population std") {
    const auto dir = espo::testing::scratch_dir("agg_pop");
    write_metrics(dir / "a.jsonl", {{0, 0.0}, {1000, 10.0}});
    write_metrics(dir / "b.jsonl", {{200, 4.0}, {1200, 4.0}});
    const auto rows = aggregate({{"x", {dir / "a.jsonl", dir / "b.jsonl"}}}, 3);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].timestep == 200.0);
    CHECK(rows[2].timestep == 1000.0);
    // t = 600: a = 6, b = 4 -> mean 5, population std 1.
    CHECK(rows[1].timestep == 600.0);
    CHECK(rows[1].return_mean == doctest::Approx(5.0));
    CHECK(rows[1].return_std == doctest::Approx(1.0));
    CHECK(rows[0].return_std == doctest::Approx(1.0));  // a = 2, b = 4
  }

  TEST_CASE("runs without completed episodes or with failures are skipped") {
    const auto dir = espo::testing::scratch_dir("curve_filter");
    std::ofstream out(dir / "m.jsonl");
    out << R"({"type":"iteration","iter":0,"timesteps":100,"mean_episode_return":null,"delta":0.1,"sample_kl":0.0,"max_log_ratio":0.1,"failed":false})"
        << '\n'
        << R"({"type":"iteration","iter":1,"timesteps":200,"mean_episode_return":-2.0,"delta":0.1,"sample_kl":0.0,"max_log_ratio":0.1,"failed":false})"
        << '\n'
        << R"({"type":"iteration","iter":2,"timesteps":300,"mean_episode_return":-1.0,"delta":0.1,"sample_kl":0.0,"max_log_ratio":0.1,"failed":true})"
        << '\n';
    out.close();
    const RunCurve c = read_run_curve(dir / "m.jsonl");
    CHECK(c.timesteps == std::vector<double>{200.0});
    CHECK(c.returns == std::vector<double>{-2.0});
  }

  TEST_CASE("CSV output round-trips the aggregate exactly") {
    const auto dir = espo::testing::scratch_dir("csv");
    write_metrics(dir / "a.jsonl", {{0, 0.1}, {1000, 1.0 / 3.0}});
    const auto rows = aggregate({{"cell, with comma", {dir / "a.jsonl"}}}, 7);
    const std::string csv = to_csv(rows);
    CHECK(csv.rfind("label,timestep,return_mean,return_std", 0) == 0);
    CHECK(csv.find("\"cell, with comma\"") != std::string::npos);
    // %.17g keeps every double exact.
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::size_t n = 0;
    while (std::getline(in, line)) {
      const auto after_label = line.substr(line.find("\",") + 2);
      const double ts = std::stod(after_label.substr(0, after_label.find(',')));
      const auto rest = after_label.substr(after_label.find(',') + 1);
      const double mean = std::stod(rest.substr(0, rest.find(',')));
      CHECK(ts == rows[n].timestep);
      CHECK(mean == rows[n].return_mean);
      ++n;
    }
    CHECK(n == rows.size());
  }

  TEST_CASE("a tiny matrix runs end to end and re-aggregates bitwise") {
    const auto dir = espo::testing::scratch_dir("matrix");
    const ExperimentMatrix m = tiny_matrix();
    const MatrixResult res = run_matrix(m, dir, 2);
    CHECK(res.runs.size() == 4);
    CHECK(res.warnings.empty());
    for (const auto& r : res.runs) {
      CHECK_FALSE(r.failed);
      CHECK(std::filesystem::exists(r.run_dir / "metrics.jsonl"));
    }
    CHECK(std::filesystem::exists(dir / "results.csv"));
    CHECK(std::filesystem::exists(dir / "runs.json"));
    const auto again = reaggregate(dir);
    CHECK(to_csv(again) == to_csv(res.rows));
    std::ifstream csv(dir / "results.csv");
    const std::string on_disk((std::istreambuf_iterator<char>(csv)), std::istreambuf_iterator<char>());
    CHECK(on_disk == to_csv(res.rows));
  }

  TEST_CASE("forcing one seed gives identical runs and zero spread") {
    const auto dir = espo::testing::scratch_dir("same_seed");
    ExperimentMatrix m = tiny_matrix();
    m.cells.resize(1);
    m.same_seed = true;
    const MatrixResult res = run_matrix(m, dir, 1);
    REQUIRE(res.runs.size() == 2);
    CHECK(res.runs[0].run_dir != res.runs[1].run_dir);
    CHECK(res.runs[0].final_eval_return == res.runs[1].final_eval_return);
    for (const auto& row : res.rows) CHECK(row.return_std == 0.0);
  }

  TEST_CASE("permutation test separates shifted samples and not identical configs") {
    std::mt19937_64 rng(61);
    std::normal_distribution<double> g;
    std::vector<double> a, b, c;
    for (int i = 0; i < 20; ++i) {
      a.push_back(g(rng));
      b.push_back(g(rng) + 3.0);
      c.push_back(g(rng));
    }
    CHECK(permutation_test(a, b, 2000, rng) < 0.01);
    CHECK(permutation_test(a, c, 2000, rng) > 0.01);
    const double p_same = permutation_test(a, a, 500, rng);
    CHECK(p_same == 1.0);
    CHECK_THROWS_AS(permutation_test({}, b, 10, rng), InputError);
  }
}
