// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "espo/kernels.hpp"

namespace espo::kernels {

#if defined(ESPO_HAVE_AVX2_TU)
const KernelTable& avx2_table_unchecked();
#endif

namespace {

bool cpu_has_avx2_fma() {
#if defined(ESPO_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* resolve() {
  const KernelTable* simd = avx2_table();
  if (const char* env = std::getenv("ESPO_KERNEL")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && simd != nullptr) return simd;
  }
  return simd != nullptr ? simd : &scalar_table();
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

const KernelTable* avx2_table() {
#if defined(ESPO_HAVE_AVX2_TU)
  static const bool supported = cpu_has_avx2_fma();
  return supported ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = resolve();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void set_active(const KernelTable& table) { g_active.store(&table, std::memory_order_release); }

}  // namespace espo::kernels
