// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Data-parallel training with N in-process workers. Workers exchange framed
// SyncMessages through a hub that releases a step only when every rank has
// contributed; gradients are averaged and stop statistics reduced (min by
// default) so all workers update and stop identically.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "espo/collective.hpp"
#include "espo/mlp.hpp"
#include "espo/train_config.hpp"
#include "espo/trainer.hpp"

namespace espo::dist {

struct SyncMessage {
  MessageTag tag = MessageTag::kGradient;
  std::uint32_t rank = 0;
  std::uint64_t step = 0;
  std::vector<double> payload;

  bool operator==(const SyncMessage&) const = default;
};

/// Frame: u32 body length | u8 tag | u32 rank | u64 step | u32 count |
/// count x f64, all little-endian.
std::vector<std::uint8_t> encode(const SyncMessage& msg);
/// Throws SyncError on a truncated or inconsistent frame.
SyncMessage decode(std::span<const std::uint8_t> frame);

class InProcessHub {
 public:
  explicit InProcessHub(int world_size,
                        std::chrono::milliseconds timeout = std::chrono::milliseconds(120'000));
  InProcessHub(const InProcessHub&) = delete;
  InProcessHub& operator=(const InProcessHub&) = delete;

  int world_size() const { return world_; }
  /// Endpoint for `rank`; the hub must outlive it.
  std::unique_ptr<Collective> endpoint(int rank);

  std::vector<std::vector<double>> exchange(int rank, std::span<const double> mine,
                                            std::uint64_t step, MessageTag tag);
  void abort(int rank, std::string_view reason);

 private:
  struct Round {
    std::vector<std::optional<std::vector<std::uint8_t>>> frames;
    int posted = 0;
    int collected = 0;
  };

  int world_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::uint64_t, Round> rounds_;
  std::optional<std::string> abort_reason_;
};

struct DistributedOptions {
  int world_size = 1;
  std::chrono::milliseconds timeout{120'000};
  /// When set, writes metrics.rank<k>.jsonl, the merged metrics.jsonl and
  /// final_report.json here.
  std::optional<std::filesystem::path> out_dir;
  /// Optional extra per-rank sinks (size world_size), e.g. for tests.
  std::vector<MetricsSink*> sinks;
};

struct DistributedResult {
  std::vector<TrainResult> workers;
  std::vector<nn::MlpParams> final_params;
  bool failed = false;
  std::string diagnostic;
};

DistributedResult run_distributed(const TrainConfig& config, const DistributedOptions& options);

/// Interleaves per-rank streams line by line, tagging each record with "rank".
void merge_metric_streams(const std::vector<std::filesystem::path>& rank_files,
                          const std::filesystem::path& merged);

}  // namespace espo::dist
