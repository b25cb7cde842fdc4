// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense inner loops of the network and optimizer. Every routine exists as a
// scalar reference and, where the CPU supports it, an AVX2+FMA variant. The
// active table is chosen once per process; set ESPO_KERNEL=scalar|avx2 to
// override the automatic choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace espo::kernels {

enum class Isa { kScalar, kAvx2 };

/// Row-major shapes: `in` is rows x in_dim, `weight` is in_dim x out_dim,
/// `out` is rows x out_dim.
struct DenseShape {
  std::size_t rows;
  std::size_t in_dim;
  std::size_t out_dim;
};

struct AdamCoefficients {
  double beta1;
  double beta2;
  double eps;
  double step_size;      // lr / (1 - beta1^t)
  double v_correction;   // 1 / (1 - beta2^t)
};

struct KernelTable {
  Isa isa;
  std::string_view name;

  // out[r, o] = bias[o] + sum_i in[r, i] * weight[i, o]
  void (*dense_forward)(std::span<const double> in, std::span<const double> weight,
                        std::span<const double> bias, std::span<double> out,
                        DenseShape shape);

  // grad_in[r, i] = sum_o grad_out[r, o] * weight[i, o]
  void (*dense_backward_input)(std::span<const double> grad_out,
                               std::span<const double> weight,
                               std::span<double> grad_in, DenseShape shape);

  // grad_weight[i, o] += sum_r in[r, i] * grad_out[r, o]
  // grad_bias[o]      += sum_r grad_out[r, o]
  void (*dense_backward_params)(std::span<const double> in,
                                std::span<const double> grad_out,
                                std::span<double> grad_weight,
                                std::span<double> grad_bias, DenseShape shape);

  // x <- tanh(x)
  void (*tanh_inplace)(std::span<double> x);

  // grad <- grad * (1 - y^2), y = tanh output
  void (*tanh_backward)(std::span<const double> y, std::span<double> grad);

  // Bias-corrected Adam moment and parameter update.
  void (*adam_update)(std::span<double> params, std::span<const double> grad,
                      std::span<double> m, std::span<double> v,
                      const AdamCoefficients& coeffs);
};

const KernelTable& scalar_table();

/// nullptr when the AVX2 translation unit was not built or the CPU lacks
/// AVX2/FMA.
const KernelTable* avx2_table();

/// Table used by the library. Resolved on first call.
const KernelTable& active();

/// Replace the active table (tests and benchmarks). Not thread-safe with
/// respect to concurrent kernel calls.
void set_active(const KernelTable& table);

}  // namespace espo::kernels
