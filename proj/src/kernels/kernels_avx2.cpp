// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "espo/kernels.hpp"

namespace espo::kernels {
namespace {

constexpr std::size_t kLanes = 4;

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void dense_forward(std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out, DenseShape s) {
  const std::size_t n_out = s.out_dim;
  const std::size_t block8 = n_out - n_out % (8 * kLanes);
  const std::size_t block1 = n_out - n_out % kLanes;
  const double* w = weight.data();
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* x = in.data() + r * s.in_dim;
    double* y = out.data() + r * n_out;
    std::size_t o = 0;
    for (; o < block8; o += 8 * kLanes) {
      __m256d acc[8];
      for (int k = 0; k < 8; ++k) acc[k] = _mm256_loadu_pd(bias.data() + o + k * kLanes);
      for (std::size_t i = 0; i < s.in_dim; ++i) {
        const __m256d xi = _mm256_broadcast_sd(x + i);
        const double* wr = w + i * n_out + o;
        for (int k = 0; k < 8; ++k)
          acc[k] = _mm256_fmadd_pd(xi, _mm256_loadu_pd(wr + k * kLanes), acc[k]);
      }
      for (int k = 0; k < 8; ++k) _mm256_storeu_pd(y + o + k * kLanes, acc[k]);
    }
    for (; o < block1; o += kLanes) {
      __m256d acc = _mm256_loadu_pd(bias.data() + o);
      for (std::size_t i = 0; i < s.in_dim; ++i)
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(x + i), _mm256_loadu_pd(w + i * n_out + o),
                              acc);
      _mm256_storeu_pd(y + o, acc);
    }
    for (; o < n_out; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < s.in_dim; ++i) acc = std::fma(x[i], w[i * n_out + o], acc);
      y[o] = acc;
    }
  }
}

void dense_backward_input(std::span<const double> grad_out, std::span<const double> weight,
                          std::span<double> grad_in, DenseShape s) {
  const std::size_t n_out = s.out_dim;
  const std::size_t block = n_out - n_out % (2 * kLanes);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* g = grad_out.data() + r * n_out;
    double* gi = grad_in.data() + r * s.in_dim;
    for (std::size_t i = 0; i < s.in_dim; ++i) {
      const double* wr = weight.data() + i * n_out;
      __m256d a0 = _mm256_setzero_pd();
      __m256d a1 = _mm256_setzero_pd();
      std::size_t o = 0;
      for (; o < block; o += 2 * kLanes) {
        a0 = _mm256_fmadd_pd(_mm256_loadu_pd(g + o), _mm256_loadu_pd(wr + o), a0);
        a1 = _mm256_fmadd_pd(_mm256_loadu_pd(g + o + kLanes), _mm256_loadu_pd(wr + o + kLanes),
                             a1);
      }
      double acc = hsum(_mm256_add_pd(a0, a1));
      for (; o < n_out; ++o) acc = std::fma(g[o], wr[o], acc);
      gi[i] = acc;
    }
  }
}

void dense_backward_params(std::span<const double> in, std::span<const double> grad_out,
                           std::span<double> grad_weight, std::span<double> grad_bias,
                           DenseShape s) {
  const std::size_t n_out = s.out_dim;
  const std::size_t block = n_out - n_out % kLanes;
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* g = grad_out.data() + r * n_out;
    const double* x = in.data() + r * s.in_dim;
    std::size_t o = 0;
    for (; o < block; o += kLanes)
      _mm256_storeu_pd(grad_bias.data() + o, _mm256_add_pd(_mm256_loadu_pd(grad_bias.data() + o),
                                                           _mm256_loadu_pd(g + o)));
    for (; o < n_out; ++o) grad_bias[o] += g[o];
    for (std::size_t i = 0; i < s.in_dim; ++i) {
      const __m256d xi = _mm256_broadcast_sd(x + i);
      double* gw = grad_weight.data() + i * n_out;
      std::size_t k = 0;
      for (; k < block; k += kLanes)
        _mm256_storeu_pd(gw + k,
                         _mm256_fmadd_pd(xi, _mm256_loadu_pd(g + k), _mm256_loadu_pd(gw + k)));
      for (; k < n_out; ++k) gw[k] = std::fma(x[i], g[k], gw[k]);
    }
  }
}

// tanh(a) = -t / (2 + t) with t = expm1(-2a), a = |x|. expm1 uses a Cody-Waite
// reduction z = n ln2 + r, |r| <= ln2/2, and a degree-13 Taylor polynomial
// (truncation error below 1e-17 relative on that interval).
inline __m256d tanh_pd(__m256d x) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d a = _mm256_andnot_pd(sign_mask, x);
  const __m256d sign = _mm256_and_pd(sign_mask, x);
  const __m256d z = _mm256_mul_pd(_mm256_set1_pd(-2.0), _mm256_min_pd(a, _mm256_set1_pd(22.0)));

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(z, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93147180369123816490e-01), z);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.90821492927058770002e-10), r);

  // p = r + r^2/2! + ... + r^13/13!
  __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_mul_pd(p, r);

  // 2^n for n in [-64, 0].
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_cvtepi32_epi64(n32);
  bits = _mm256_slli_epi64(_mm256_add_epi64(bits, _mm256_set1_epi64x(1023)), 52);
  const __m256d two_n = _mm256_castsi256_pd(bits);

  // t = 2^n * p + (2^n - 1)
  const __m256d t = _mm256_fmadd_pd(two_n, p, _mm256_sub_pd(two_n, _mm256_set1_pd(1.0)));
  const __m256d th = _mm256_div_pd(_mm256_sub_pd(_mm256_setzero_pd(), t),
                                   _mm256_add_pd(_mm256_set1_pd(2.0), t));
  return _mm256_or_pd(th, sign);
}

void tanh_inplace(std::span<double> x) {
  const std::size_t n = x.size();
  const std::size_t block = n - n % kLanes;
  std::size_t i = 0;
  for (; i < block; i += kLanes) _mm256_storeu_pd(x.data() + i, tanh_pd(_mm256_loadu_pd(x.data() + i)));
  if (i < n) {
    alignas(32) double tail[kLanes] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t k = i; k < n; ++k) tail[k - i] = x[k];
    _mm256_store_pd(tail, tanh_pd(_mm256_load_pd(tail)));
    for (std::size_t k = i; k < n; ++k) x[k] = tail[k - i];
  }
}

void tanh_backward(std::span<const double> y, std::span<double> grad) {
  const std::size_t n = grad.size();
  const std::size_t block = n - n % kLanes;
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i < block; i += kLanes) {
    const __m256d yi = _mm256_loadu_pd(y.data() + i);
    const __m256d d = _mm256_fnmadd_pd(yi, yi, one);
    _mm256_storeu_pd(grad.data() + i, _mm256_mul_pd(_mm256_loadu_pd(grad.data() + i), d));
  }
  for (; i < n; ++i) grad[i] *= std::fma(-y[i], y[i], 1.0);
}

void adam_update(std::span<double> params, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamCoefficients& c) {
  const std::size_t n = params.size();
  const std::size_t block = n - n % kLanes;
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d one_b1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d one_b2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d step = _mm256_set1_pd(c.step_size);
  const __m256d vcorr = _mm256_set1_pd(c.v_correction);
  const __m256d eps = _mm256_set1_pd(c.eps);
  std::size_t i = 0;
  for (; i < block; i += kLanes) {
    const __m256d g = _mm256_loadu_pd(grad.data() + i);
    const __m256d mi =
        _mm256_fmadd_pd(b1, _mm256_loadu_pd(m.data() + i), _mm256_mul_pd(one_b1, g));
    const __m256d vi = _mm256_fmadd_pd(b2, _mm256_loadu_pd(v.data() + i),
                                       _mm256_mul_pd(one_b2, _mm256_mul_pd(g, g)));
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, vcorr)), eps);
    const __m256d p = _mm256_loadu_pd(params.data() + i);
    _mm256_storeu_pd(params.data() + i, _mm256_sub_pd(p, _mm256_div_pd(_mm256_mul_pd(step, mi), denom)));
    _mm256_storeu_pd(m.data() + i, mi);
    _mm256_storeu_pd(v.data() + i, vi);
  }
  for (; i < n; ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    params[i] -= c.step_size * m[i] / (std::sqrt(v[i] * c.v_correction) + c.eps);
  }
}

constexpr KernelTable kAvx2Table{
    Isa::kAvx2,            "avx2",       dense_forward, dense_backward_input,
    dense_backward_params, tanh_inplace, tanh_backward, adam_update,
};

}  // namespace

const KernelTable& avx2_table_unchecked() { return kAvx2Table; }

}  // namespace espo::kernels
