// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Worker-group collectives used by the trainer. Every reduction is built on a
// lockstep all-gather that hands each rank all contributions in rank order,
// so reductions are computed identically (bitwise) on every worker.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace espo {

enum class MessageTag : std::uint8_t {
  kGradient = 1,
  kDelta = 2,
  kStop = 3,
  kMoments = 4,
  kParamHash = 5,
};

enum class Reduction { kMin, kMean, kMax };
Reduction parse_reduction(std::string_view name);
std::string_view reduction_name(Reduction r);

class Collective {
 public:
  virtual ~Collective() = default;
  virtual int rank() const = 0;
  virtual int world_size() const = 0;

  /// Blocks until every rank contributed for `step`; returns contributions
  /// indexed by rank. Throws DeadlockError on timeout, SyncError on a tag or
  /// step mismatch or when a peer aborted.
  virtual std::vector<std::vector<double>> all_gather(std::span<const double> mine,
                                                      std::uint64_t step, MessageTag tag) = 0;

  /// Tells peers this rank will not contribute again.
  virtual void abort(std::string_view reason) = 0;
};

/// world_size = 1; all_gather echoes the input.
class LocalCollective final : public Collective {
 public:
  int rank() const override { return 0; }
  int world_size() const override { return 1; }
  std::vector<std::vector<double>> all_gather(std::span<const double> mine, std::uint64_t,
                                              MessageTag) override {
    return {std::vector<double>(mine.begin(), mine.end())};
  }
  void abort(std::string_view) override {}
};

/// Rank-ascending summation starting from rank 0's vector, divided by N.
/// With N = 1 the result is bitwise the input.
std::vector<double> mean_fixed_order(const std::vector<std::vector<double>>& parts);
double reduce_scalar(std::span<const double> values, Reduction how);

/// Lossless packing of a 64-bit hash into two exactly representable doubles.
std::vector<double> pack_u64(std::uint64_t v);
std::uint64_t unpack_u64(std::span<const double> packed);

}  // namespace espo
