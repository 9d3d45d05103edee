// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop kernels for dense double-precision arithmetic.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The variant is picked once at startup from CPUID and
// can be forced with the DFILM_KERNELS environment variable ("scalar" or
// "avx2") or with select_isa(). All higher-level numerics go through the
// active table, so switching the ISA switches the whole library.

#include <cstddef>
#include <string_view>

namespace dfilm::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += a[i] * b[i]
  void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);
  // y[i] = gamma[i] * x[i] + beta[i]
  void (*affine)(const double* x, const double* gamma, const double* beta,
                 double* y, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table() noexcept;
#endif

/// True when the running CPU can execute `isa`.
bool supported(Isa isa) noexcept;

/// Table for a specific ISA. Throws dfilm::ConfigError if unsupported.
const KernelTable& table(Isa isa);

/// Currently active table.
const KernelTable& active() noexcept;

/// Switch the active table. Not thread-safe with respect to running kernels.
void select_isa(Isa isa);

Isa parse_isa(std::string_view name);

inline double dot(const double* x, const double* y, std::size_t n) {
  return active().dot(x, y, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void mul_acc(const double* a, const double* b, double* y, std::size_t n) {
  active().mul_acc(a, b, y, n);
}
inline void affine(const double* x, const double* gamma, const double* beta,
                   double* y, std::size_t n) {
  active().affine(x, gamma, beta, y, n);
}

}  // namespace dfilm::kernels
