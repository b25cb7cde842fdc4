// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Two-hidden-layer tanh MLP with a shared body, a diagonal-Gaussian policy
// head (state-independent log-std) and a scalar value head. Gradients are
// hand-written reverse mode over batched activations.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace espo::nn {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct TensorSlot {
  std::string name;
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
  std::size_t size() const { return rows * cols; }
};

/// Flat parameter layout. Dense weights are stored input-major
/// (in_dim x out_dim). The head emits act_dim means followed by the value.
struct NetLayout {
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::array<std::size_t, 2> hidden{64, 64};

  enum Slot : std::size_t { kW1, kB1, kW2, kB2, kWHead, kBHead, kLogStd, kSlotCount };

  std::vector<TensorSlot> slots() const;
  TensorSlot slot(Slot which) const { return slots()[which]; }
  std::size_t size() const;
  std::size_t head_dim() const { return act_dim + 1; }

  nlohmann::json to_json() const;
  static NetLayout from_json(const nlohmann::json& doc);
  bool operator==(const NetLayout&) const = default;
};

struct MlpParams {
  NetLayout layout;
  std::vector<double> values;

  static MlpParams zeros(const NetLayout& layout);
  /// Orthogonal init: gain sqrt(2) on hidden layers, 0.01 on the mean head,
  /// 1.0 on the value head; zero biases; log-std initialised to 0.
  static MlpParams initialize(const NetLayout& layout, std::mt19937_64& rng);

  std::span<double> tensor(NetLayout::Slot which);
  std::span<const double> tensor(NetLayout::Slot which) const;

  /// FNV-1a over the raw bytes, for cross-worker agreement checks.
  std::uint64_t hash() const;
  bool all_finite() const;
};

/// Read-only behavior-policy parameters captured at the start of an iteration.
using ParamSnapshot = std::shared_ptr<const MlpParams>;
inline ParamSnapshot capture(const MlpParams& params) {
  return std::make_shared<const MlpParams>(params);
}

struct GaussianActionDist {
  std::vector<double> mean;
  std::vector<double> log_std;  // already clamped to [kLogStdMin, kLogStdMax]
};

double log_prob(std::span<const double> mean, std::span<const double> log_std,
                std::span<const double> action);
inline double log_prob(const GaussianActionDist& dist, std::span<const double> action) {
  return log_prob(dist.mean, dist.log_std, action);
}

/// Activations of a batched forward pass, retained for backward().
struct ForwardPass {
  std::size_t rows = 0;
  std::size_t act_dim = 0;
  std::vector<double> input;  // rows x obs_dim
  std::vector<double> h1;     // rows x hidden[0], post-tanh
  std::vector<double> h2;     // rows x hidden[1], post-tanh
  std::vector<double> head;   // rows x (act_dim + 1)
  std::vector<double> log_std;

  std::span<const double> mean(std::size_t r) const {
    return {head.data() + r * (act_dim + 1), act_dim};
  }
  double value(std::size_t r) const { return head[r * (act_dim + 1) + act_dim]; }
};

/// `obs` holds rows * obs_dim values. Throws InputError on a size mismatch or
/// non-finite input.
ForwardPass forward(const MlpParams& params, std::span<const double> obs);
void forward_into(const MlpParams& params, std::span<const double> obs, ForwardPass& pass);

/// Single observation convenience wrapper.
std::pair<GaussianActionDist, double> forward_one(const MlpParams& params,
                                                  std::span<const double> obs);

/// Upstream gradients of a scalar loss with respect to the network outputs
/// (and optionally directly with respect to the parameters).
struct OutputGrads {
  std::vector<double> d_mean;     // rows x act_dim
  std::vector<double> d_value;    // rows
  std::vector<double> d_log_std;  // act_dim, w.r.t. the clamped log-std
  std::vector<double> d_params;   // empty or layout.size()

  static OutputGrads zeros(const ForwardPass& pass);
};

/// Accumulates parameter gradients; throws NumericalError naming the first
/// tensor that received a non-finite gradient.
std::vector<double> backward(const MlpParams& params, const ForwardPass& pass,
                             const OutputGrads& grads);

struct LossValue {
  double loss = 0.0;
  OutputGrads grads;
};
using LossClosure = std::function<LossValue(const MlpParams&, const ForwardPass&)>;

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Runs forward on `obs`, evaluates the closure and back-propagates.
LossAndGradient grad(const MlpParams& params, std::span<const double> obs,
                     const LossClosure& loss);

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(std::size_t n_params) : m_(n_params, 0.0), v_(n_params, 0.0) {}

  /// Throws NumericalError if the update leaves a non-finite parameter.
  void step(MlpParams& params, std::span<const double> gradient, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

/// Writes `<stem>.bin` (little-endian float64 parameters) and `<stem>.json`
/// (layout header plus `extra`).
void save_checkpoint(const std::filesystem::path& stem, const MlpParams& params,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
  MlpParams params;
  nlohmann::json extra;
};
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace espo::nn
