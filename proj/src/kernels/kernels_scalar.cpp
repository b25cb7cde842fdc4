// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "espo/kernels.hpp"

namespace espo::kernels {
namespace {

void dense_forward(std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out, DenseShape s) {
  for (std::size_t r = 0; r < s.rows; ++r) {
    double* o_row = out.data() + r * s.out_dim;
    const double* i_row = in.data() + r * s.in_dim;
    for (std::size_t o = 0; o < s.out_dim; ++o) o_row[o] = bias[o];
    for (std::size_t i = 0; i < s.in_dim; ++i) {
      const double x = i_row[i];
      const double* w_row = weight.data() + i * s.out_dim;
      for (std::size_t o = 0; o < s.out_dim; ++o) o_row[o] += x * w_row[o];
    }
  }
}

void dense_backward_input(std::span<const double> grad_out, std::span<const double> weight,
                          std::span<double> grad_in, DenseShape s) {
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* g_row = grad_out.data() + r * s.out_dim;
    double* gi_row = grad_in.data() + r * s.in_dim;
    for (std::size_t i = 0; i < s.in_dim; ++i) {
      const double* w_row = weight.data() + i * s.out_dim;
      double acc = 0.0;
      for (std::size_t o = 0; o < s.out_dim; ++o) acc += g_row[o] * w_row[o];
      gi_row[i] = acc;
    }
  }
}

void dense_backward_params(std::span<const double> in, std::span<const double> grad_out,
                           std::span<double> grad_weight, std::span<double> grad_bias,
                           DenseShape s) {
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* g_row = grad_out.data() + r * s.out_dim;
    const double* i_row = in.data() + r * s.in_dim;
    for (std::size_t o = 0; o < s.out_dim; ++o) grad_bias[o] += g_row[o];
    for (std::size_t i = 0; i < s.in_dim; ++i) {
      const double x = i_row[i];
      double* gw_row = grad_weight.data() + i * s.out_dim;
      for (std::size_t o = 0; o < s.out_dim; ++o) gw_row[o] += x * g_row[o];
    }
  }
}

void tanh_inplace(std::span<double> x) {
  for (double& v : x) v = std::tanh(v);
}

void tanh_backward(std::span<const double> y, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - y[i] * y[i];
}

void adam_update(std::span<double> params, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamCoefficients& c) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    params[i] -= c.step_size * m[i] / (std::sqrt(v[i] * c.v_correction) + c.eps);
  }
}

constexpr KernelTable kScalarTable{
    Isa::kScalar,          "scalar",     dense_forward, dense_backward_input,
    dense_backward_params, tanh_inplace, tanh_backward, adam_update,
};

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

}  // namespace espo::kernels
