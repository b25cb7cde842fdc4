// Acceptance checks. Each criterion prints exactly one PASS/FAIL line with the
// measured values next to the pinned thresholds. Exit status is non-zero when
// any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "espo/bound_verifier.hpp"
#include "espo/distributed.hpp"
#include "espo/error.hpp"
#include "espo/harness.hpp"
#include "espo/objectives.hpp"
#include "espo/rollout.hpp"
#include "espo/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace espo;

namespace {

// Pinned thresholds.
constexpr std::size_t kCertInstances = 1000;
constexpr double kCertMaxSeconds = 60.0;
constexpr double kBoundSlackTol = 1e-9;
constexpr double kRatioIdentityTol = 1e-12;
constexpr double kEqualityTol = 1e-12;

constexpr double kFdStep = 1e-5;
constexpr double kFdMaxRelErr = 1e-4;
// Gradients below this magnitude are compared absolutely: central differences
// carry roughly eps_machine * |loss| / h of rounding noise.
constexpr double kFdRelFloor = 1e-6;
constexpr std::size_t kFdMinibatches = 20;
constexpr std::size_t kFdMinibatchSize = 32;

constexpr double kGaeTol = 1e-10;
constexpr std::size_t kGaeSequences = 200;
constexpr std::size_t kGaeLength = 50;

constexpr double kEspoDelta = 0.25;
constexpr std::size_t kEspoEpochs = 20;
constexpr std::uint64_t kStopRunTimesteps = 60 * 2048;
constexpr double kMinEarlyStopFraction = 0.5;

constexpr std::uint64_t kRatioRunTimesteps = 150 * 2048;
constexpr std::size_t kWarmupIterations = 5;
constexpr double kRcPpoMinFractionAbove = 0.20;
constexpr double kEspoMinFractionWithin = 0.90;
constexpr double kRatioRunMaxSeconds = 600.0;

constexpr double kLearnThreshold = -40.0;
constexpr std::size_t kLearnSeeds = 5;
constexpr std::size_t kLearnMinPassing = 4;
constexpr double kLearnMaxSeconds = 900.0;

constexpr double kSmokeMaxSeconds = 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- bounds ----

const bounds::CertificationResult& certification() {
  static std::optional<bounds::CertificationResult> cached;
  if (!cached) cached = bounds::run_certification(0, kCertInstances);
  return *cached;
}

struct CheckTally {
  std::size_t pass = 0, total = 0;
  double min_slack = 0.0;
};

CheckTally tally(const char* name) {
  const json& c = certification().report.at("checks").at(name);
  return {c.at("pass").get<std::size_t>(), c.at("total").get<std::size_t>(), c.at("min_slack").get<double>()};
}

Outcome certify_bound(const char* name, bool timed) {
  const auto& cert = certification();
  const CheckTally t = tally(name);
  bool ok = t.pass == t.total && t.total == kCertInstances && t.min_slack >= -kBoundSlackTol;
  std::string detail = fmt("%zu/%zu pass, min slack %.3g (>= %.0e)", t.pass, t.total, t.min_slack, -kBoundSlackTol);
  if (timed) {
    ok = ok && cert.wall_time_s < kCertMaxSeconds;
    detail += fmt(", %.2f s for all checks (< %.0f s)", cert.wall_time_s, kCertMaxSeconds);
  }
  return {ok, detail};
}

Outcome c1() { return certify_bound("theorem2", true); }
Outcome c2() { return certify_bound("theorem1", false); }

Outcome c3() {
  const CheckTally p = tally("proposition1");
  const CheckTally tv = tally("tv_identity");
  const bool ok = p.pass == p.total && tv.pass == tv.total && p.total == kCertInstances &&
                  tv.total == kCertInstances && p.min_slack >= -kRatioIdentityTol &&
                  tv.min_slack >= -kRatioIdentityTol;
  return {ok, fmt("ratio bound %zu/%zu (min slack %.3g), TV identity %zu/%zu (max gap %.3g, tol %.0e)", p.pass,
                  p.total, p.min_slack, tv.pass, tv.total, -tv.min_slack, kRatioIdentityTol)};
}

Outcome c4() {
  const CheckTally c = tally("corollary_rd_kl");
  double worst_equal = 0.0;
  for (std::size_t id = 0; id < kCertInstances; ++id) {
    const bounds::Instance inst = bounds::make_instance(0, id);
    const auto r = bounds::check_corollary_rd_kl(inst.mdp, inst.pair.pi, inst.pair.pi);
    worst_equal = std::max({worst_equal, std::abs(r.lhs - r.rhs), std::abs(r.lhs), std::abs(r.rhs)});
  }
  const bool ok = c.pass == c.total && c.total == kCertInstances && c.min_slack >= -kBoundSlackTol &&
                  worst_equal <= kEqualityTol;
  return {ok, fmt("%zu/%zu pass (min slack %.3g), equality at identical policies within %.3g (<= %.0e)", c.pass,
                  c.total, c.min_slack, worst_equal, kEqualityTol)};
}

// ------------------------------------------------------------- gradients ----

// True when some sample's ratio sits on different sides of a kink of the
// objective at the two probe points; central differences are meaningless there.
bool straddles_kink(const objectives::ObjectiveSpec& spec, const std::vector<double>& lp_up,
                    const std::vector<double>& lp_dn, const std::vector<double>& lp_old) {
  std::vector<double> kinks;
  switch (spec.kind) {
    case objectives::Kind::kClip:
    case objectives::Kind::kClipRecip: {
      const auto [lo, hi] = objectives::clip_range(spec);
      kinks = {lo, hi};
      break;
    }
    case objectives::Kind::kR2po: kinks = {1.0}; break;
    default: return false;
  }
  for (std::size_t i = 0; i < lp_old.size(); ++i) {
    const double ru = std::exp(lp_up[i] - lp_old[i]), rd = std::exp(lp_dn[i] - lp_old[i]);
    for (double k : kinks)
      if ((ru - k) * (rd - k) <= 0.0) return true;
  }
  return false;
}

Outcome c5() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  const nn::NetLayout layout{4, 2, {16, 16}};
  const objectives::Kind kinds[] = {objectives::Kind::kSurrogate, objectives::Kind::kClip,
                                    objectives::Kind::kClipRecip, objectives::Kind::kKlPenalty,
                                    objectives::Kind::kR2po};
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::size_t b = 0; b < kFdMinibatches; ++b) {
    const nn::MlpParams snap = nn::MlpParams::initialize(layout, rng);
    objectives::Minibatch mb;
    mb.size = kFdMinibatchSize;
    for (std::size_t i = 0; i < mb.size * 4; ++i) mb.observations.push_back(g(rng));
    for (std::size_t i = 0; i < mb.size * 2; ++i) mb.actions.push_back(0.5 * g(rng));
    for (std::size_t i = 0; i < mb.size; ++i) {
      mb.advantages.push_back(g(rng));
      mb.returns.push_back(g(rng));
    }
    mb.behavior_log_probs = objectives::log_probs(nn::forward(snap, mb.observations), mb.actions);
    // Evaluate away from the snapshot so ratios differ from one.
    nn::MlpParams p = snap;
    for (double& w : p.values) w += 0.05 * g(rng);
    for (objectives::Kind kind : kinds) {
      objectives::ObjectiveSpec spec;
      spec.kind = kind;
      spec.kl_direction = b % 2 == 0 ? objectives::KlDirection::kBehaviorFirst : objectives::KlDirection::kReverse;
      const auto analytic = objectives::loss_and_grad(p, spec, mb).gradient;
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        nn::MlpParams up = p, dn = p;
        up.values[i] += kFdStep;
        dn.values[i] -= kFdStep;
        if (straddles_kink(spec, objectives::log_probs(nn::forward(up, mb.observations), mb.actions),
                           objectives::log_probs(nn::forward(dn, mb.observations), mb.actions),
                           mb.behavior_log_probs)) {
          ++skipped;
          continue;
        }
        const double fd =
            (objectives::evaluate(up, spec, mb).total() - objectives::evaluate(dn, spec, mb).total()) / (2 * kFdStep);
        const double rel = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), kFdRelFloor});
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  const bool ok = worst < kFdMaxRelErr && checked > 0;
  return {ok, fmt("max relative error %.3g (< %.0e) over %zu coordinates, 5 objectives x %zu minibatches; "
                  "%zu coordinates skipped at objective kinks",
                  worst, kFdMaxRelErr, checked, kFdMinibatches, skipped)};
}

// ------------------------------------------------------------------- GAE ----

Outcome c6() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double gamma = 0.99;
  double worst = 0.0, worst_mc = 0.0;
  for (std::size_t trial = 0; trial < kGaeSequences; ++trial) {
    const std::size_t n = kGaeLength;
    std::vector<double> r(n), v(n), boot(n, 0.0);
    std::vector<std::uint8_t> term(n, 0), trunc(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
      r[t] = g(rng);
      v[t] = g(rng);
      const double x = u(rng);
      if (x < 0.04) term[t] = 1;
      else if (x < 0.08) trunc[t] = 1;
      if (trunc[t] || t + 1 == n) boot[t] = g(rng);
    }
    for (double lambda : {0.0, 0.95, 1.0}) {
      const auto res = rollout::compute_gae(r, v, term, trunc, boot, gamma, lambda);
      // Nested sum over the segment, each TD error from its definition.
      for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0, w = 1.0;
        for (std::size_t k = t; k < n; ++k) {
          const double next_v = term[k] ? 0.0 : (trunc[k] || k + 1 == n) ? boot[k] : v[k + 1];
          acc += w * (r[k] + gamma * next_v - v[k]);
          if (term[k] || trunc[k]) break;
          w *= gamma * lambda;
        }
        worst = std::max(worst, std::abs(acc - res.advantages[t]));
      }
    }
    // Terminating episode: lambda = 1 is the discounted return minus the value.
    std::fill(term.begin(), term.end(), 0);
    std::fill(trunc.begin(), trunc.end(), 0);
    term[n - 1] = 1;
    const auto mc = rollout::compute_gae(r, v, term, trunc, boot, gamma, 1.0);
    for (std::size_t t = 0; t < n; ++t) {
      double ret = 0.0, w = 1.0;
      for (std::size_t k = t; k < n; ++k, w *= gamma) ret += w * r[k];
      worst_mc = std::max(worst_mc, std::abs(mc.advantages[t] - (ret - v[t])));
    }
  }
  const bool ok = worst <= kGaeTol && worst_mc <= kGaeTol;
  return {ok, fmt("max |GAE - nested sum| %.3g, max |GAE(1) - MC| %.3g (<= %.0e) over %zu sequences", worst,
                  worst_mc, kGaeTol, kGaeSequences)};
}

// ------------------------------------------------------------- training ----

TrainConfig espo_pendulum(std::uint64_t timesteps) {
  TrainConfig c;
  c.env = "pendulum";
  c.total_timesteps = timesteps;
  c.max_epochs = kEspoEpochs;
  c.objective.kind = objectives::Kind::kSurrogate;
  c.stop_rule = stopping::StopRule::rd_es(kEspoDelta);
  return c;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  std::vector<json> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

Outcome c7(const fs::path& work) {
  const fs::path dir = work / "c7_espo_pendulum";
  const TrainResult r = run_training(espo_pendulum(kStopRunTimesteps), dir);
  if (r.failed) return {false, "training failed: " + r.diagnostic};
  // Replay every stop decision from the per-minibatch instrumentation.
  std::map<std::size_t, std::vector<json>> by_iter;
  for (json& rec : read_jsonl(dir / "metrics.jsonl"))
    if (rec.at("type") == "minibatch") by_iter[rec.at("iter").get<std::size_t>()].push_back(std::move(rec));
  std::size_t early = 0, stopped = 0, violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (const IterationReport& it : r.iterations) {
    if (it.stop_triggered && it.epochs_used < kEspoEpochs) ++early;
    const auto& recs = by_iter[it.iteration];
    double prev = 0.0, max_inc = 0.0;
    std::optional<double> delta_at_stop;
    for (const json& rec : recs) {
      const double d = rec.at("delta").get<double>();
      max_inc = std::max(max_inc, std::abs(d - prev));
      prev = d;
      if (rec.at("stop").get<bool>()) delta_at_stop = d;
    }
    if (!delta_at_stop) continue;
    ++stopped;
    const double margin = kEspoDelta + max_inc - *delta_at_stop;
    worst_margin = std::min(worst_margin, margin);
    if (margin < 0.0) ++violations;
  }
  const double frac = static_cast<double>(early) / static_cast<double>(r.iterations.size());
  const bool ok = frac >= kMinEarlyStopFraction && violations == 0;
  return {ok, fmt("%zu/%zu iterations stopped before epoch %zu (%.1f%%, need >= %.0f%%); overshoot bound held in "
                  "%zu/%zu stops (min margin %.3g)",
                  early, r.iterations.size(), kEspoEpochs, 100 * frac, 100 * kMinEarlyStopFraction,
                  stopped - violations, stopped, stopped ? worst_margin : 0.0)};
}

struct RatioSummary {
  std::size_t counted = 0, above = 0, failed = 0;
  double fraction_above() const { return counted ? static_cast<double>(above) / static_cast<double>(counted) : 0.0; }
};

RatioSummary ratio_summary(const TrainResult& r) {
  RatioSummary s;
  for (const IterationReport& it : r.iterations) {
    if (it.iteration < kWarmupIterations) continue;
    if (it.failed) {
      ++s.failed;
      continue;
    }
    ++s.counted;
    if (it.final_stats.max_log_ratio > std::numbers::ln2) ++s.above;
  }
  return s;
}

Outcome c8(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig ppo;
  ppo.env = "pendulum";
  ppo.total_timesteps = kRatioRunTimesteps;
  ppo.objective.kind = objectives::Kind::kClip;
  ppo.objective.clip_epsilon = 0.1;
  ppo.stop_rule = stopping::StopRule::none();
  ppo.lr_init = 3e-4;
  ppo.lr_schedule = LrSchedule::kConstant;
  ppo.log_minibatches = false;
  const TrainResult rp = run_training(ppo, work / "c8_rcppo");

  TrainConfig espo = espo_pendulum(kRatioRunTimesteps);
  espo.log_minibatches = false;
  const TrainResult re = run_training(espo, work / "c8_espo");
  const double secs = seconds_since(t0);

  const RatioSummary sp = ratio_summary(rp), se = ratio_summary(re);
  const double within = 1.0 - se.fraction_above();
  const bool ok = !re.failed && sp.fraction_above() >= kRcPpoMinFractionAbove && within >= kEspoMinFractionWithin &&
                  secs < kRatioRunMaxSeconds;
  return {ok, fmt("RC-PPO max log-ratio > log 2 in %zu/%zu post-warm-up iterations (%.1f%%, need >= %.0f%%; %zu "
                  "aborted); ESPO <= log 2 in %zu/%zu (%.1f%%, need >= %.0f%%); %.0f s (< %.0f s)",
                  sp.above, sp.counted, 100 * sp.fraction_above(), 100 * kRcPpoMinFractionAbove, sp.failed,
                  se.counted - se.above, se.counted, 100 * within, 100 * kEspoMinFractionWithin, secs,
                  kRatioRunMaxSeconds)};
}

Outcome c9(const fs::path& work, const fs::path& fixtures) {
  const auto t0 = std::chrono::steady_clock::now();
  harness::ExperimentMatrix m;
  m.name = "point_mass_learning";
  m.seeds = kLearnSeeds;
  m.cells = {{"ESPO", TrainConfig::load(fixtures / "point_mass_espo.json")}};
  const auto& cfg = m.cells[0].config;
  if (cfg.env != "point_mass" || cfg.objective.kind != objectives::Kind::kSurrogate ||
      cfg.stop_rule.kind != stopping::RuleKind::kRdEs || cfg.stop_rule.threshold != kEspoDelta ||
      cfg.max_epochs != kEspoEpochs || cfg.total_timesteps != 200'000)
    return {false, "reference config is not ESPO(0.25, K = 20) on point-mass for 200k steps"};
  const harness::MatrixResult res = harness::run_matrix(m, work / "c9_point_mass");
  const double secs = seconds_since(t0);
  std::size_t passing = 0;
  std::string returns;
  for (const auto& run : res.runs) {
    if (!run.failed && run.final_eval_return >= kLearnThreshold) ++passing;
    returns += fmt("%s%.1f", returns.empty() ? "" : ", ", run.failed ? std::nan("") : run.final_eval_return);
  }
  const bool ok = passing >= kLearnMinPassing && secs < kLearnMaxSeconds;
  return {ok, fmt("%zu/%zu seeds reach >= %.0f (need %zu) [%s]; %.0f s (< %.0f s)", passing, res.runs.size(),
                  kLearnThreshold, kLearnMinPassing, returns.c_str(), secs, kLearnMaxSeconds)};
}

Outcome c10(const fs::path& work) {
  // World size 1 against the single-process trainer, per seed.
  std::size_t identical = 0;
  for (std::uint64_t seed : {0, 1}) {
    TrainConfig c = espo_pendulum(3 * 2048);
    c.seed = seed;
    MemorySink single_sink, dist_sink;
    Trainer t(c, nullptr, &single_sink);
    t.run();
    dist::DistributedOptions opt;
    opt.world_size = 1;
    opt.sinks = {&dist_sink};
    const auto d = dist::run_distributed(c, opt);
    if (!d.failed && d.final_params[0].values == t.params().values && dist_sink.records == single_sink.records)
      ++identical;
  }

  // Four workers: hashes agree every iteration; stop steps replay offline.
  TrainConfig c = espo_pendulum(4 * 2048 * 4);
  std::vector<MemorySink> sinks(4);
  dist::DistributedOptions opt;
  opt.world_size = 4;
  opt.out_dir = work / "c10_world4";
  for (auto& s : sinks) opt.sinks.push_back(&s);
  const auto d = dist::run_distributed(c, opt);
  if (d.failed) return {false, "4-worker run failed: " + d.diagnostic};

  std::vector<std::vector<json>> iters(4), mbs(4);
  for (std::size_t r = 0; r < 4; ++r)
    for (const json& rec : sinks[r].records) {
      if (rec.at("type") == "iteration") iters[r].push_back(rec);
      if (rec.at("type") == "minibatch") mbs[r].push_back(rec);
    }
  std::size_t hash_agree = 0, stop_agree = 0, n_iter = iters[0].size(), stops = 0;
  bool shapes_ok = true;
  for (std::size_t r = 1; r < 4; ++r) shapes_ok = shapes_ok && iters[r].size() == n_iter && mbs[r].size() == mbs[0].size();
  if (!shapes_ok) return {false, "workers logged different numbers of records"};
  std::size_t k = 0;
  for (std::size_t i = 0; i < n_iter; ++i) {
    bool same = true;
    for (std::size_t r = 1; r < 4; ++r) same = same && iters[r][i].at("param_hash") == iters[0][i].at("param_hash");
    if (same) ++hash_agree;
    std::optional<std::size_t> replayed;
    for (; k < mbs[0].size() && mbs[0][k].at("iter").get<std::size_t>() == i; ++k) {
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < 4; ++r) lo = std::min(lo, mbs[r][k].at("delta").get<double>());
      if (!replayed && lo > kEspoDelta) replayed = mbs[0][k].at("step").get<std::size_t>();
    }
    const json& logged = iters[0][i].at("stop_step");
    if (replayed) ++stops;
    if ((replayed && !logged.is_null() && logged.get<std::size_t>() == *replayed) || (!replayed && logged.is_null()))
      ++stop_agree;
  }
  bool final_same = true;
  for (std::size_t r = 1; r < 4; ++r) final_same = final_same && d.final_params[r].values == d.final_params[0].values;
  const bool ok = identical == 2 && hash_agree == n_iter && stop_agree == n_iter && final_same && n_iter > 0;
  return {ok, fmt("world 1 bitwise identical for %zu/2 seeds; world 4 hashes agree in %zu/%zu iterations; logged "
                  "stop step matches offline min-over-workers replay in %zu/%zu (%zu stops)",
                  identical, hash_agree, n_iter, stop_agree, n_iter, stops)};
}

Outcome c11(const fs::path& work) {
  using objectives::Kind;
  using stopping::RuleKind;
  struct Expect {
    const char* preset;
    const char* label;
    Kind kind;
    RuleKind rule;
    double threshold;
  };
  const Expect expected[] = {
      {"espo_vs_ppo", "ESPO", Kind::kSurrogate, RuleKind::kRdEs, 0.25},
      {"espo_vs_ppo", "RC-PPO(0.2)", Kind::kClip, RuleKind::kNone, 0.0},
      {"espo_vs_ppo", "PPO-KLES", Kind::kClip, RuleKind::kKlEs, 0.01},
      {"rd_vs_kl", "KL-ES(0.05)", Kind::kSurrogate, RuleKind::kKlEs, 0.05},
      {"baselines", "R2PO", Kind::kR2po, RuleKind::kNone, 0.0},
  };
  std::size_t ok_count = 0;
  double slowest = 0.0;
  std::string notes;
  for (const Expect& e : expected) {
    const auto m = harness::builtin_matrix(e.preset, 2 * 2048, 1);
    const harness::Cell* cell = nullptr;
    for (const auto& c : m.cells)
      if (c.label == e.label) cell = &c;
    if (!cell) {
      notes += fmt(" %s missing from %s;", e.label, e.preset);
      continue;
    }
    const auto& cfg = cell->config;
    if (cfg.objective.kind != e.kind || cfg.stop_rule.kind != e.rule ||
        (e.rule != RuleKind::kNone && cfg.stop_rule.threshold != e.threshold)) {
      notes += fmt(" %s has the wrong objective or stop rule;", e.label);
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r = run_training(cfg, work / "c11_smoke" / e.label);
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    if (r.failed || secs > kSmokeMaxSeconds || !std::isfinite(r.final_eval_return)) {
      notes += fmt(" %s smoke run failed or took %.1f s;", e.label, secs);
      continue;
    }
    ++ok_count;
  }
  const bool ok = ok_count == std::size(expected);
  return {ok, fmt("%zu/%zu presets reachable and smoke-run, slowest %.1f s (<= %.0f s)%s", ok_count,
                  std::size(expected), slowest, kSmokeMaxSeconds, notes.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_runs";
  std::string fixtures = ESPO_FIXTURE_DIR;
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Directory for run outputs");
  app.add_option("--fixtures", fixtures, "Directory holding reference configurations");
  app.add_option("--criterion", only, "Run only these criteria (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::create_directories(work);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"bound certification (improvement bound, ratio-deviation form)", c1},
      {"bound certification (improvement bound, TV form)", c2},
      {"ratio bound and TV identity", c3},
      {"ratio deviation vs KL", c4},
      {"gradient fidelity", c5},
      {"GAE oracle", c6},
      {"ESPO stop behavior", [&] { return c7(work); }},
      {"ratio range: RC-PPO vs ESPO", [&] { return c8(work); }},
      {"learning at desk scale", [&] { return c9(work, fixtures); }},
      {"distributed correctness", [&] { return c10(work); }},
      {"config reachability", [&] { return c11(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d: %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
