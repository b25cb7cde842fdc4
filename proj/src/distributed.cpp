// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/distributed.hpp"

#include <algorithm>
#include <bit>
#include <exception>
#include <fstream>
#include <thread>

#include "espo/error.hpp"

namespace espo {

Reduction parse_reduction(std::string_view name) {
  if (name == "min") return Reduction::kMin;
  if (name == "mean") return Reduction::kMean;
  if (name == "max") return Reduction::kMax;
  throw InputError("unknown reduction '" + std::string(name) + "'");
}

std::string_view reduction_name(Reduction r) {
  switch (r) {
    case Reduction::kMin: return "min";
    case Reduction::kMean: return "mean";
    case Reduction::kMax: return "max";
  }
  return "?";
}

std::vector<double> mean_fixed_order(const std::vector<std::vector<double>>& parts) {
  if (parts.empty()) throw InputError("mean over zero contributions");
  std::vector<double> sum = parts[0];
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (parts[k].size() != sum.size()) throw SyncError("gradient contributions differ in length");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += parts[k][i];
  }
  const double n = static_cast<double>(parts.size());
  for (double& x : sum) x /= n;
  return sum;
}

double reduce_scalar(std::span<const double> values, Reduction how) {
  if (values.empty()) throw InputError("reduction over zero contributions");
  switch (how) {
    case Reduction::kMin: return *std::min_element(values.begin(), values.end());
    case Reduction::kMax: return *std::max_element(values.begin(), values.end());
    case Reduction::kMean: {
      double s = values[0];
      for (std::size_t k = 1; k < values.size(); ++k) s += values[k];
      return s / static_cast<double>(values.size());
    }
  }
  return values[0];
}

std::vector<double> pack_u64(std::uint64_t v) {
  return {static_cast<double>(v >> 32), static_cast<double>(v & 0xFFFFFFFFULL)};
}

std::uint64_t unpack_u64(std::span<const double> packed) {
  if (packed.size() != 2) throw SyncError("malformed packed hash");
  return (static_cast<std::uint64_t>(packed[0]) << 32) | static_cast<std::uint64_t>(packed[1]);
}

namespace dist {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw SyncError("truncated sync frame");
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(static_cast<T>(in[pos + b]) << (8 * b));
  pos += sizeof(T);
  return v;
}

class HubEndpoint final : public Collective {
 public:
  HubEndpoint(InProcessHub& hub, int rank) : hub_(hub), rank_(rank) {}
  int rank() const override { return rank_; }
  int world_size() const override { return hub_.world_size(); }
  std::vector<std::vector<double>> all_gather(std::span<const double> mine, std::uint64_t step,
                                              MessageTag tag) override {
    return hub_.exchange(rank_, mine, step, tag);
  }
  void abort(std::string_view reason) override { hub_.abort(rank_, reason); }

 private:
  InProcessHub& hub_;
  int rank_;
};

}  // namespace

std::vector<std::uint8_t> encode(const SyncMessage& msg) {
  const std::uint32_t count = static_cast<std::uint32_t>(msg.payload.size());
  const std::uint32_t body = 1 + 4 + 8 + 4 + 8 * count;
  std::vector<std::uint8_t> out;
  out.reserve(4 + body);
  put_le<std::uint32_t>(out, body);
  out.push_back(static_cast<std::uint8_t>(msg.tag));
  put_le<std::uint32_t>(out, msg.rank);
  put_le<std::uint64_t>(out, msg.step);
  put_le<std::uint32_t>(out, count);
  for (double x : msg.payload) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

SyncMessage decode(std::span<const std::uint8_t> frame) {
  std::size_t pos = 0;
  const auto body = get_le<std::uint32_t>(frame, pos);
  if (frame.size() != 4 + static_cast<std::size_t>(body)) throw SyncError("sync frame length mismatch");
  SyncMessage msg;
  const std::uint8_t tag = get_le<std::uint8_t>(frame, pos);
  if (tag < 1 || tag > 5) throw SyncError("unknown sync message tag");
  msg.tag = static_cast<MessageTag>(tag);
  msg.rank = get_le<std::uint32_t>(frame, pos);
  msg.step = get_le<std::uint64_t>(frame, pos);
  const auto count = get_le<std::uint32_t>(frame, pos);
  if (body != 1 + 4 + 8 + 4 + 8ULL * count) throw SyncError("sync frame payload count mismatch");
  msg.payload.resize(count);
  for (auto& x : msg.payload) x = std::bit_cast<double>(get_le<std::uint64_t>(frame, pos));
  return msg;
}

InProcessHub::InProcessHub(int world_size, std::chrono::milliseconds timeout)
    : world_(world_size), timeout_(timeout) {
  if (world_size < 1) throw InputError("world size must be at least 1");
}

std::unique_ptr<Collective> InProcessHub::endpoint(int rank) {
  if (rank < 0 || rank >= world_) throw InputError("rank out of range");
  return std::make_unique<HubEndpoint>(*this, rank);
}

std::vector<std::vector<double>> InProcessHub::exchange(int rank, std::span<const double> mine,
                                                        std::uint64_t step, MessageTag tag) {
  std::vector<std::uint8_t> frame =
      encode(SyncMessage{tag, static_cast<std::uint32_t>(rank), step, {mine.begin(), mine.end()}});

  std::unique_lock lock(mu_);
  if (abort_reason_) throw SyncError(*abort_reason_);
  Round& round = rounds_[step];
  if (round.frames.empty()) round.frames.resize(static_cast<std::size_t>(world_));
  if (round.frames[static_cast<std::size_t>(rank)])
    throw SyncError("rank " + std::to_string(rank) + " contributed twice to step " + std::to_string(step));
  round.frames[static_cast<std::size_t>(rank)] = std::move(frame);
  ++round.posted;
  cv_.notify_all();

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (round.posted < world_ && !abort_reason_) {
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && round.posted < world_ &&
        !abort_reason_) {
      int missing = 0;
      while (missing < world_ && round.frames[static_cast<std::size_t>(missing)]) ++missing;
      throw DeadlockError("rank " + std::to_string(missing) + " did not contribute to step " +
                              std::to_string(step) + " within the timeout",
                          missing);
    }
  }
  if (abort_reason_) throw SyncError(*abort_reason_);

  std::vector<std::vector<double>> out(static_cast<std::size_t>(world_));
  for (int r = 0; r < world_; ++r) {
    const SyncMessage msg = decode(*round.frames[static_cast<std::size_t>(r)]);
    if (msg.tag != tag || msg.step != step || msg.rank != static_cast<std::uint32_t>(r))
      throw SyncError("rank " + std::to_string(r) + " sent a mismatched message at step " +
                      std::to_string(step));
    out[static_cast<std::size_t>(r)] = msg.payload;
  }
  if (++round.collected == world_) rounds_.erase(step);
  return out;
}

void InProcessHub::abort(int rank, std::string_view reason) {
  {
    std::lock_guard lock(mu_);
    if (!abort_reason_) abort_reason_ = "rank " + std::to_string(rank) + " aborted: " + std::string(reason);
  }
  cv_.notify_all();
}

void merge_metric_streams(const std::vector<std::filesystem::path>& rank_files,
                          const std::filesystem::path& merged) {
  std::vector<std::vector<std::string>> lines(rank_files.size());
  std::size_t longest = 0;
  for (std::size_t r = 0; r < rank_files.size(); ++r) {
    std::ifstream in(rank_files[r]);
    if (!in) throw InputError("cannot read " + rank_files[r].string());
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) lines[r].push_back(std::move(line));
    longest = std::max(longest, lines[r].size());
  }
  std::ofstream out(merged, std::ios::trunc);
  if (!out) throw InputError("cannot write " + merged.string());
  for (std::size_t i = 0; i < longest; ++i)
    for (std::size_t r = 0; r < lines.size(); ++r) {
      if (i >= lines[r].size()) continue;
      nlohmann::json rec = nlohmann::json::parse(lines[r][i]);
      rec["rank"] = r;
      out << rec.dump() << '\n';
    }
}

namespace {

class TeeSink final : public MetricsSink {
 public:
  TeeSink(MetricsSink* a, MetricsSink* b) : a_(a), b_(b) {}
  void write(const nlohmann::json& record) override {
    if (a_) a_->write(record);
    if (b_) b_->write(record);
  }

 private:
  MetricsSink* a_;
  MetricsSink* b_;
};

}  // namespace

DistributedResult run_distributed(const TrainConfig& config, const DistributedOptions& options) {
  const int n = options.world_size;
  if (n < 1) throw InputError("world size must be at least 1");
  if (!options.sinks.empty() && options.sinks.size() != static_cast<std::size_t>(n))
    throw InputError("need one sink per rank");
  config.validate();
  config.iterations(n);

  InProcessHub hub(n, options.timeout);
  std::vector<std::unique_ptr<JsonlSink>> files(static_cast<std::size_t>(n));
  std::vector<std::filesystem::path> rank_paths;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    for (int r = 0; r < n; ++r) {
      rank_paths.push_back(*options.out_dir / ("metrics.rank" + std::to_string(r) + ".jsonl"));
      files[static_cast<std::size_t>(r)] = std::make_unique<JsonlSink>(rank_paths.back());
    }
  }

  DistributedResult result;
  result.workers.resize(static_cast<std::size_t>(n));
  result.final_params.resize(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n));

  for (int r = 0; r < n; ++r) {
    threads.emplace_back([&, r] {
      const auto k = static_cast<std::size_t>(r);
      auto endpoint = hub.endpoint(r);
      try {
        TeeSink sink(files[k].get(), options.sinks.empty() ? nullptr : options.sinks[k]);
        Trainer trainer(config, endpoint.get(), &sink);
        result.workers[k] = trainer.run();
        result.final_params[k] = trainer.params();
      } catch (...) {
        errors[k] = std::current_exception();
        endpoint->abort("worker raised before completing");
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& f : files) f.reset();

  for (int r = 0; r < n; ++r) {
    const auto k = static_cast<std::size_t>(r);
    if (errors[k]) {
      try {
        std::rethrow_exception(errors[k]);
      } catch (const std::exception& e) {
        result.failed = true;
        if (result.diagnostic.empty()) result.diagnostic = "rank " + std::to_string(r) + ": " + e.what();
      }
    } else if (result.workers[k].failed && !result.failed) {
      result.failed = true;
      result.diagnostic = "rank " + std::to_string(r) + ": " + result.workers[k].diagnostic;
    }
  }

  if (options.out_dir) {
    merge_metric_streams(rank_paths, *options.out_dir / "metrics.jsonl");
    nlohmann::json workers = nlohmann::json::array();
    for (int r = 0; r < n; ++r) {
      const auto& w = result.workers[static_cast<std::size_t>(r)];
      workers.push_back({{"rank", r},
                         {"iterations_run", w.iterations.size()},
                         {"failed", w.failed},
                         {"diagnostic", w.diagnostic},
                         {"final_eval_return", std::isfinite(w.final_eval_return)
                                                   ? nlohmann::json(w.final_eval_return)
                                                   : nlohmann::json(nullptr)},
                         {"wall_time_s", w.wall_time_s}});
    }
    const nlohmann::json report{{"config", config.to_json()},
                                {"world_size", n},
                                {"failed", result.failed},
                                {"diagnostic", result.diagnostic},
                                {"workers", workers}};
    std::ofstream out(*options.out_dir / "final_report.json");
    out << report.dump(2) << '\n';
    if (!result.failed) {
      nn::save_checkpoint(*options.out_dir / "checkpoint", result.final_params[0],
                          {{"config", config.to_json()}, {"world_size", n}});
    }
  }
  return result;
}

}  // namespace dist
}  // namespace espo
