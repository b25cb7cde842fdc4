// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "espo/mlp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "espo/error.hpp"
#include "espo/kernels.hpp"

namespace espo::nn {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

void orthogonal_fill(std::span<double> w, std::size_t rows, std::size_t cols, double gain,
                     std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t big = std::max(rows, cols);
  const std::size_t small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = n01(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix so the distribution is uniform over orthogonal matrices.
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      w[i * cols + j] = gain * (rows >= cols ? q(i, j) : q(j, i));
}

void check_finite_slot(std::span<const double> g, const TensorSlot& slot) {
  for (double x : g)
    if (!std::isfinite(x)) throw NumericalError("non-finite gradient in tensor '" + slot.name + "'");
}

}  // namespace

std::vector<TensorSlot> NetLayout::slots() const {
  std::vector<TensorSlot> out;
  out.reserve(kSlotCount);
  std::size_t off = 0;
  auto add = [&](const char* name, std::size_t r, std::size_t c) {
    out.push_back(TensorSlot{name, off, r, c});
    off += r * c;
  };
  add("l1.weight", obs_dim, hidden[0]);
  add("l1.bias", 1, hidden[0]);
  add("l2.weight", hidden[0], hidden[1]);
  add("l2.bias", 1, hidden[1]);
  add("head.weight", hidden[1], head_dim());
  add("head.bias", 1, head_dim());
  add("log_std", 1, act_dim);
  return out;
}

std::size_t NetLayout::size() const {
  return obs_dim * hidden[0] + hidden[0] + hidden[0] * hidden[1] + hidden[1] +
         hidden[1] * head_dim() + head_dim() + act_dim;
}

nlohmann::json NetLayout::to_json() const {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& s : slots())
    tensors.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", {s.rows, s.cols}}});
  return {{"obs_dim", obs_dim},  {"act_dim", act_dim}, {"hidden", hidden},
          {"activation", "tanh"}, {"count", size()},   {"tensors", tensors}};
}

NetLayout NetLayout::from_json(const nlohmann::json& doc) {
  NetLayout l;
  l.obs_dim = doc.at("obs_dim").get<std::size_t>();
  l.act_dim = doc.at("act_dim").get<std::size_t>();
  const auto h = doc.at("hidden").get<std::vector<std::size_t>>();
  if (h.size() != 2) throw InputError("layout must have two hidden layers");
  l.hidden = {h[0], h[1]};
  if (doc.contains("count") && doc.at("count").get<std::size_t>() != l.size())
    throw InputError("layout parameter count does not match its shapes");
  return l;
}

MlpParams MlpParams::zeros(const NetLayout& layout) {
  if (layout.obs_dim == 0 || layout.act_dim == 0 || layout.hidden[0] == 0 || layout.hidden[1] == 0)
    throw InputError("network dimensions must be positive");
  return MlpParams{layout, std::vector<double>(layout.size(), 0.0)};
}

MlpParams MlpParams::initialize(const NetLayout& layout, std::mt19937_64& rng) {
  MlpParams p = zeros(layout);
  const double hidden_gain = std::numbers::sqrt2;
  orthogonal_fill(p.tensor(NetLayout::kW1), layout.obs_dim, layout.hidden[0], hidden_gain, rng);
  orthogonal_fill(p.tensor(NetLayout::kW2), layout.hidden[0], layout.hidden[1], hidden_gain, rng);

  // Mean columns and the value column get separate orthogonal draws.
  const std::size_t h = layout.hidden[1];
  const std::size_t hd = layout.head_dim();
  std::vector<double> mean_w(h * layout.act_dim);
  std::vector<double> value_w(h);
  orthogonal_fill(mean_w, h, layout.act_dim, 0.01, rng);
  orthogonal_fill(value_w, h, 1, 1.0, rng);
  auto head = p.tensor(NetLayout::kWHead);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < layout.act_dim; ++j) head[i * hd + j] = mean_w[i * layout.act_dim + j];
    head[i * hd + layout.act_dim] = value_w[i];
  }
  return p;
}

std::span<double> MlpParams::tensor(NetLayout::Slot which) {
  const TensorSlot s = layout.slot(which);
  return {values.data() + s.offset, s.size()};
}

std::span<const double> MlpParams::tensor(NetLayout::Slot which) const {
  const TensorSlot s = layout.slot(which);
  return {values.data() + s.offset, s.size()};
}

std::uint64_t MlpParams::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

bool MlpParams::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

double log_prob(std::span<const double> mean, std::span<const double> log_std,
                std::span<const double> action) {
  double lp = 0.0;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    const double z = (action[j] - mean[j]) * std::exp(-log_std[j]);
    lp += -0.5 * z * z - log_std[j] - kHalfLog2Pi;
  }
  return lp;
}

void forward_into(const MlpParams& params, std::span<const double> obs, ForwardPass& pass) {
  const NetLayout& L = params.layout;
  if (obs.size() % L.obs_dim != 0) throw InputError("observation batch size is not a multiple of obs_dim");
  for (double x : obs)
    if (!std::isfinite(x)) throw InputError("non-finite observation");
  const std::size_t rows = obs.size() / L.obs_dim;
  const auto& k = kernels::active();

  pass.rows = rows;
  pass.act_dim = L.act_dim;
  pass.input.assign(obs.begin(), obs.end());
  pass.h1.resize(rows * L.hidden[0]);
  pass.h2.resize(rows * L.hidden[1]);
  pass.head.resize(rows * L.head_dim());

  k.dense_forward(pass.input, params.tensor(NetLayout::kW1), params.tensor(NetLayout::kB1), pass.h1,
                  {rows, L.obs_dim, L.hidden[0]});
  k.tanh_inplace(pass.h1);
  k.dense_forward(pass.h1, params.tensor(NetLayout::kW2), params.tensor(NetLayout::kB2), pass.h2,
                  {rows, L.hidden[0], L.hidden[1]});
  k.tanh_inplace(pass.h2);
  k.dense_forward(pass.h2, params.tensor(NetLayout::kWHead), params.tensor(NetLayout::kBHead),
                  pass.head, {rows, L.hidden[1], L.head_dim()});

  const auto ls = params.tensor(NetLayout::kLogStd);
  pass.log_std.resize(L.act_dim);
  for (std::size_t j = 0; j < L.act_dim; ++j) pass.log_std[j] = std::clamp(ls[j], kLogStdMin, kLogStdMax);
}

ForwardPass forward(const MlpParams& params, std::span<const double> obs) {
  ForwardPass pass;
  forward_into(params, obs, pass);
  return pass;
}

std::pair<GaussianActionDist, double> forward_one(const MlpParams& params,
                                                  std::span<const double> obs) {
  if (obs.size() != params.layout.obs_dim) throw InputError("observation has the wrong dimension");
  const ForwardPass pass = forward(params, obs);
  const auto m = pass.mean(0);
  return {GaussianActionDist{{m.begin(), m.end()}, pass.log_std}, pass.value(0)};
}

OutputGrads OutputGrads::zeros(const ForwardPass& pass) {
  OutputGrads g;
  g.d_mean.assign(pass.rows * pass.act_dim, 0.0);
  g.d_value.assign(pass.rows, 0.0);
  g.d_log_std.assign(pass.act_dim, 0.0);
  return g;
}

std::vector<double> backward(const MlpParams& params, const ForwardPass& pass,
                             const OutputGrads& grads) {
  const NetLayout& L = params.layout;
  const std::size_t rows = pass.rows;
  const std::size_t hd = L.head_dim();
  if (grads.d_mean.size() != rows * L.act_dim || grads.d_value.size() != rows ||
      grads.d_log_std.size() != L.act_dim)
    throw InputError("output gradient shapes do not match the forward pass");
  const auto& k = kernels::active();
  const auto slots = L.slots();

  std::vector<double> g = grads.d_params.empty() ? std::vector<double>(L.size(), 0.0) : grads.d_params;
  if (g.size() != L.size()) throw InputError("direct parameter gradient has the wrong size");
  auto gslot = [&](NetLayout::Slot s) { return std::span<double>(g.data() + slots[s].offset, slots[s].size()); };

  std::vector<double> d_head(rows * hd);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < L.act_dim; ++j) d_head[r * hd + j] = grads.d_mean[r * L.act_dim + j];
    d_head[r * hd + L.act_dim] = grads.d_value[r];
  }

  k.dense_backward_params(pass.h2, d_head, gslot(NetLayout::kWHead), gslot(NetLayout::kBHead),
                          {rows, L.hidden[1], hd});
  std::vector<double> d_h2(rows * L.hidden[1]);
  k.dense_backward_input(d_head, params.tensor(NetLayout::kWHead), d_h2, {rows, L.hidden[1], hd});
  k.tanh_backward(pass.h2, d_h2);

  k.dense_backward_params(pass.h1, d_h2, gslot(NetLayout::kW2), gslot(NetLayout::kB2),
                          {rows, L.hidden[0], L.hidden[1]});
  std::vector<double> d_h1(rows * L.hidden[0]);
  k.dense_backward_input(d_h2, params.tensor(NetLayout::kW2), d_h1, {rows, L.hidden[0], L.hidden[1]});
  k.tanh_backward(pass.h1, d_h1);

  k.dense_backward_params(pass.input, d_h1, gslot(NetLayout::kW1), gslot(NetLayout::kB1),
                          {rows, L.obs_dim, L.hidden[0]});

  const auto raw_log_std = params.tensor(NetLayout::kLogStd);
  auto g_log_std = gslot(NetLayout::kLogStd);
  for (std::size_t j = 0; j < L.act_dim; ++j)
    if (raw_log_std[j] >= kLogStdMin && raw_log_std[j] <= kLogStdMax) g_log_std[j] += grads.d_log_std[j];

  for (std::size_t s = NetLayout::kSlotCount; s-- > 0;)
    check_finite_slot(gslot(static_cast<NetLayout::Slot>(s)), slots[s]);
  return g;
}

LossAndGradient grad(const MlpParams& params, std::span<const double> obs, const LossClosure& loss) {
  const ForwardPass pass = forward(params, obs);
  LossValue lv = loss(params, pass);
  if (!std::isfinite(lv.loss)) throw NumericalError("loss is not finite");
  return {lv.loss, backward(params, pass, lv.grads)};
}

void Adam::step(MlpParams& params, std::span<const double> gradient, double lr) {
  if (gradient.size() != params.values.size() || m_.size() != params.values.size())
    throw InputError("Adam state does not match the parameter vector");
  ++t_;
  const double t = static_cast<double>(t_);
  const kernels::AdamCoefficients c{kBeta1, kBeta2, kEps, lr / (1.0 - std::pow(kBeta1, t)),
                                    1.0 / (1.0 - std::pow(kBeta2, t))};
  kernels::active().adam_update(params.values, gradient, m_, v_, c);
  if (!params.all_finite()) throw NumericalError("Adam update produced a non-finite parameter");
}

void save_checkpoint(const std::filesystem::path& stem, const MlpParams& params,
                     const nlohmann::json& extra) {
  static_assert(sizeof(double) == 8);
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path header = stem;
  header += ".json";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw InputError("cannot write " + bin.string());
    for (double x : params.values) {
      auto bits = std::bit_cast<std::uint64_t>(x);
      unsigned char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>(bits >> (8 * b));
      out.write(reinterpret_cast<const char*>(buf), 8);
    }
  }
  nlohmann::json doc{{"format", "float64-le"}, {"layout", params.layout.to_json()}, {"extra", extra}};
  std::ofstream out(header);
  if (!out) throw InputError("cannot write " + header.string());
  out << doc.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path header = stem;
  header += ".json";
  std::ifstream hin(header);
  if (!hin) throw InputError("cannot read " + header.string());
  nlohmann::json doc;
  try {
    hin >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint header: ") + e.what());
  }
  Checkpoint ck{MlpParams::zeros(NetLayout::from_json(doc.at("layout"))), doc.value("extra", nlohmann::json::object())};
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw InputError("cannot read " + bin.string());
  for (double& x : ck.params.values) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw InputError("checkpoint payload is truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
    x = std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError("checkpoint payload has trailing bytes");
  return ck;
}

}  // namespace espo::nn
