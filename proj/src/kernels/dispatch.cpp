// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "dfilm/error.hpp"
#include "dfilm/kernels.hpp"

namespace dfilm::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("DFILM_KERNELS");
  if (env != nullptr && *env != '\0') {
    // An unusable request falls back to the best available table rather
    // than aborting static initialization.
    try {
      return &table(parse_isa(env));
    } catch (const Error&) {
    }
  }
  return supported(Isa::avx2) ? &table(Isa::avx2) : &scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

bool supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw ConfigError("kernel ISA not supported on this CPU");
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::avx2) return avx2_table();
#endif
  return scalar_table();
}

const KernelTable& active() noexcept {
  return *active_slot().load(std::memory_order_relaxed);
}

void select_isa(Isa isa) { active_slot().store(&table(isa), std::memory_order_relaxed); }

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw ConfigError("unknown kernel ISA '" + std::string(name) + "'");
}

}  // namespace dfilm::kernels
