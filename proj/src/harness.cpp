// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "espo/error.hpp"
#include "espo/trainer.hpp"

namespace espo::harness {

namespace {

using nlohmann::json;

TrainConfig base_config(std::string_view env, std::uint64_t total_timesteps) {
  TrainConfig c;
  c.env = std::string(env);
  c.total_timesteps = total_timesteps;
  // Per-minibatch records dominate disk use in sweeps; iteration records carry
  // everything aggregation needs.
  c.log_minibatches = false;
  return c;
}

Cell make_cell(std::string label, const TrainConfig& base, objectives::Kind kind,
               stopping::StopRule rule) {
  Cell cell{std::move(label), base};
  cell.config.objective.kind = kind;
  cell.config.stop_rule = rule;
  return cell;
}

Cell espo_cell(std::string label, const TrainConfig& base, double delta = 0.25) {
  return make_cell(std::move(label), base, objectives::Kind::kSurrogate,
                   stopping::StopRule::rd_es(delta));
}

Cell clip_cell(std::string label, const TrainConfig& base, double eps,
               stopping::StopRule rule = stopping::StopRule::none()) {
  Cell cell = make_cell(std::move(label), base, objectives::Kind::kClip, rule);
  cell.config.objective.clip_epsilon = eps;
  return cell;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double json_number(const json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return std::numeric_limits<double>::quiet_NaN();
  return it->get<double>();
}

std::string sanitize(std::string_view label) {
  std::string out;
  for (char c : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out.push_back(keep ? c : '_');
  }
  return out;
}

}  // namespace

void ExperimentMatrix::validate() const {
  if (cells.empty()) throw InputError("experiment matrix '" + name + "' has no cells");
  if (seeds == 0) throw InputError("experiment matrix needs at least one seed");
  std::set<std::string> labels;
  for (const Cell& cell : cells) {
    if (cell.label.empty()) throw InputError("cell label must not be empty");
    if (!labels.insert(cell.label).second) throw InputError("duplicate cell label '" + cell.label + "'");
    if (cell.config.total_timesteps != cells.front().config.total_timesteps) {
      throw InputError("cell '" + cell.label + "' has a different total_timesteps budget");
    }
    cell.config.validate();
  }
}

std::vector<std::string> preset_names() {
  return {"espo_vs_ppo", "rd_vs_kl", "threshold_sweep", "norm_ablation", "baselines"};
}

ExperimentMatrix builtin_matrix(std::string_view name, std::uint64_t total_timesteps,
                                std::size_t seeds, std::string_view env) {
  using stopping::StopRule;
  const TrainConfig base = base_config(env, total_timesteps);
  ExperimentMatrix m;
  m.name = std::string(name);
  m.seeds = seeds;

  if (name == "espo_vs_ppo") {
    m.cells = {espo_cell("ESPO", base), clip_cell("RC-PPO(0.1)", base, 0.1),
               clip_cell("RC-PPO(0.2)", base, 0.2),
               clip_cell("PPO-KLES", base, 0.2, StopRule::kl_es(0.01))};
  } else if (name == "rd_vs_kl") {
    m.cells = {espo_cell("RD-ES(0.25)", base),
               make_cell("KL-ES(0.05)", base, objectives::Kind::kSurrogate, StopRule::kl_es(0.05)),
               make_cell("KL-ES(0.01)", base, objectives::Kind::kSurrogate, StopRule::kl_es(0.01))};
  } else if (name == "threshold_sweep") {
    for (double d : {0.1, 0.25, 0.5}) {
      std::ostringstream label;
      label << "ESPO(" << d << ")";
      m.cells.push_back(espo_cell(label.str(), base, d));
    }
  } else if (name == "norm_ablation") {
    struct Variant {
      const char* label;
      bool obs, reward;
    };
    for (Variant v : {Variant{"obs+reward", true, true}, Variant{"obs", true, false},
                      Variant{"reward", false, true}, Variant{"none", false, false}}) {
      Cell cell = espo_cell(v.label, base);
      cell.config.normalize_obs = v.obs;
      cell.config.normalize_reward = v.reward;
      m.cells.push_back(std::move(cell));
    }
  } else if (name == "baselines") {
    Cell kl_pen = make_cell("KL-penalty", base, objectives::Kind::kKlPenalty, StopRule::none());
    Cell r2po = make_cell("R2PO", base, objectives::Kind::kR2po, StopRule::none());
    Cell recip = clip_cell("RC-PPO-recip(0.2)", base, 0.2);
    recip.config.objective.kind = objectives::Kind::kClipRecip;
    m.cells = {espo_cell("ESPO", base),
               clip_cell("RC-PPO(0.2)", base, 0.2),
               clip_cell("PPO-KLES", base, 0.2, StopRule::kl_es(0.01)),
               make_cell("KL-ES(0.05)", base, objectives::Kind::kSurrogate, StopRule::kl_es(0.05)),
               kl_pen,
               r2po,
               recip};
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw InputError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  m.validate();
  return m;
}

RunCurve read_run_curve(const std::filesystem::path& metrics_file) {
  std::ifstream in(metrics_file);
  if (!in) throw InputError("cannot open metrics file " + metrics_file.string());
  RunCurve curve;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    if (rec.value("type", "") != "iteration" || rec.value("failed", false)) continue;
    const double ret = json_number(rec, "mean_episode_return");
    // Iterations where no episode ended carry no return sample.
    if (std::isnan(ret)) continue;
    const double t = rec.at("timesteps").get<double>();
    if (!curve.timesteps.empty() && t <= curve.timesteps.back()) continue;
    curve.timesteps.push_back(t);
    curve.returns.push_back(ret);
    curve.delta.push_back(json_number(rec, "delta"));
    curve.sample_kl.push_back(json_number(rec, "sample_kl"));
    curve.max_log_ratio.push_back(json_number(rec, "max_log_ratio"));
  }
  return curve;
}

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (xs.empty() || xs.size() != ys.size()) throw InputError("interpolate: empty or mismatched series");
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  const std::size_t lo = hi - 1;
  const double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + w * (ys[hi] - ys[lo]);
}

std::vector<AggregateRow> aggregate(const std::vector<LabelRuns>& runs, std::size_t grid_points) {
  if (grid_points == 0) throw InputError("grid needs at least one point");
  std::vector<std::vector<RunCurve>> curves(runs.size());
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < runs.size(); ++l) {
    for (const auto& file : runs[l].metrics_files) {
      RunCurve c = read_run_curve(file);
      if (c.timesteps.empty()) continue;
      t0 = std::max(t0, c.timesteps.front());
      t1 = std::min(t1, c.timesteps.back());
      curves[l].push_back(std::move(c));
    }
  }
  bool any = false;
  for (const auto& c : curves) any = any || !c.empty();
  if (!any) return {};
  // Runs with disjoint coverage still get a grid; values clamp at the ends.
  if (t1 < t0) std::swap(t0, t1);

  std::vector<double> grid;
  if (t1 == t0) {
    grid.push_back(t0);
  } else {
    grid.resize(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
      grid[i] = grid_points == 1 ? t0 : t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    }
    grid.back() = t1;
  }

  std::vector<AggregateRow> rows;
  for (std::size_t l = 0; l < runs.size(); ++l) {
    if (curves[l].empty()) continue;
    const double n = static_cast<double>(curves[l].size());
    for (double t : grid) {
      AggregateRow row;
      row.label = runs[l].label;
      row.timestep = t;
      double sum = 0.0, sum_d = 0.0, sum_k = 0.0, sum_m = 0.0;
      std::vector<double> rets;
      for (const RunCurve& c : curves[l]) {
        const double r = interpolate(c.timesteps, c.returns, t);
        rets.push_back(r);
        sum += r;
        sum_d += interpolate(c.timesteps, c.delta, t);
        sum_k += interpolate(c.timesteps, c.sample_kl, t);
        sum_m += interpolate(c.timesteps, c.max_log_ratio, t);
      }
      row.return_mean = sum / n;
      double ss = 0.0;
      for (double r : rets) ss += (r - row.return_mean) * (r - row.return_mean);
      row.return_std = std::sqrt(ss / n);
      row.delta_mean = sum_d / n;
      row.kl_mean = sum_k / n;
      row.max_log_ratio_mean = sum_m / n;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string to_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out << "label,timestep,return_mean,return_std,delta_mean,kl_mean,max_log_ratio_mean\n";
  for (const auto& r : rows) {
    std::string label;
    for (char ch : r.label) label += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    out << '"' << label << '"' << ',' << fmt_double(r.timestep) << ',' << fmt_double(r.return_mean)
        << ',' << fmt_double(r.return_std) << ',' << fmt_double(r.delta_mean) << ','
        << fmt_double(r.kl_mean) << ',' << fmt_double(r.max_log_ratio_mean) << '\n';
  }
  return out.str();
}

void write_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_csv(rows);
}

std::size_t max_parallel_from_env() {
  if (const char* v = std::getenv("ESPO_MAX_PARALLEL")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

std::vector<LabelRuns> collect_label_runs(const std::vector<std::string>& labels,
                                          const std::vector<RunOutcome>& runs) {
  std::vector<LabelRuns> out;
  for (const auto& label : labels) {
    LabelRuns lr{label, {}};
    for (const auto& r : runs) {
      if (r.label == label && !r.failed) lr.metrics_files.push_back(r.run_dir / "metrics.jsonl");
    }
    out.push_back(std::move(lr));
  }
  return out;
}

json outcome_json(const RunOutcome& r, const std::filesystem::path& root) {
  return {{"label", r.label},
          {"seed", r.seed},
          {"run_dir", std::filesystem::relative(r.run_dir, root).generic_string()},
          {"failed", r.failed},
          {"diagnostic", r.diagnostic},
          {"final_eval_return", std::isfinite(r.final_eval_return) ? json(r.final_eval_return) : json()},
          {"wall_time_s", r.wall_time_s}};
}

}  // namespace

MatrixResult run_matrix(const ExperimentMatrix& matrix, const std::filesystem::path& out_dir,
                        std::size_t max_parallel) {
  matrix.validate();
  std::filesystem::create_directories(out_dir);

  struct Job {
    std::size_t cell;
    std::uint64_t seed;
    std::filesystem::path dir;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < matrix.cells.size(); ++c) {
    for (std::size_t k = 0; k < matrix.seeds; ++k) {
      const std::uint64_t seed = matrix.seed_for(k);
      auto dir = out_dir / sanitize(matrix.cells[c].label) / ("seed_" + std::to_string(seed));
      // Forced same seed: keep per-run directories distinct.
      if (matrix.same_seed) dir += "_run" + std::to_string(k);
      jobs.push_back({c, seed, dir});
    }
  }

  MatrixResult result;
  result.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      RunOutcome& out = result.runs[j];
      out.label = matrix.cells[job.cell].label;
      out.seed = job.seed;
      out.run_dir = job.dir;
      const auto start = std::chrono::steady_clock::now();
      try {
        TrainConfig cfg = matrix.cells[job.cell].config;
        cfg.seed = job.seed;
        const TrainResult tr = run_training(cfg, job.dir);
        out.failed = tr.failed;
        out.diagnostic = tr.diagnostic;
        out.final_eval_return = tr.final_eval_return;
      } catch (const std::exception& e) {
        out.failed = true;
        out.diagnostic = e.what();
      }
      out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(max_parallel, 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<std::string> labels;
  for (const auto& cell : matrix.cells) labels.push_back(cell.label);
  for (const auto& r : result.runs) {
    if (r.failed) {
      result.warnings.push_back("run " + r.label + " seed " + std::to_string(r.seed) +
                                " failed: " + r.diagnostic);
    }
  }
  result.rows = aggregate(collect_label_runs(labels, result.runs));
  write_csv(result.rows, out_dir / "results.csv");

  json doc;
  doc["matrix"] = matrix.name;
  doc["labels"] = labels;
  doc["seeds"] = matrix.seeds;
  doc["same_seed"] = matrix.same_seed;
  doc["runs"] = json::array();
  for (const auto& r : result.runs) doc["runs"].push_back(outcome_json(r, out_dir));
  doc["warnings"] = result.warnings;
  std::ofstream(out_dir / "runs.json") << doc.dump(2) << '\n';
  return result;
}

std::vector<AggregateRow> reaggregate(const std::filesystem::path& out_dir) {
  std::ifstream in(out_dir / "runs.json");
  if (!in) throw InputError("no runs.json under " + out_dir.string());
  const json doc = json::parse(in);
  std::vector<RunOutcome> runs;
  for (const auto& r : doc.at("runs")) {
    RunOutcome o;
    o.label = r.at("label").get<std::string>();
    o.failed = r.at("failed").get<bool>();
    o.run_dir = out_dir / r.at("run_dir").get<std::string>();
    runs.push_back(std::move(o));
  }
  return aggregate(collect_label_runs(doc.at("labels").get<std::vector<std::string>>(), runs));
}

double permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                        std::size_t n_permutations, std::mt19937_64& rng) {
  if (a.empty() || b.empty()) throw InputError("permutation test needs two non-empty samples");
  if (n_permutations == 0) throw InputError("permutation test needs at least one permutation");
  auto mean = [](auto first, auto last) {
    return std::accumulate(first, last, 0.0) / static_cast<double>(std::distance(first, last));
  };
  const double observed = std::abs(mean(a.begin(), a.end()) - mean(b.begin(), b.end()));
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto split = pooled.begin() + static_cast<std::ptrdiff_t>(a.size());
  std::size_t extreme = 0;
  for (std::size_t i = 0; i < n_permutations; ++i) {
    std::shuffle(pooled.begin(), pooled.end(), rng);
    const double d = std::abs(mean(pooled.begin(), split) - mean(split, pooled.end()));
    if (d >= observed - 1e-12) ++extreme;
  }
  // Add-one correction keeps the estimate a valid p-value.
  return static_cast<double>(extreme + 1) / static_cast<double>(n_permutations + 1);
}

}  // namespace espo::harness
