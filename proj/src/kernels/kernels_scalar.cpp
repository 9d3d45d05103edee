// SPDX-License-Identifier: Apache-2.0
#include "dfilm/kernels.hpp"

namespace dfilm::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void mul_acc_scalar(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void affine_scalar(const double* x, const double* gamma, const double* beta,
                   double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = gamma[i] * x[i] + beta[i];
}

constexpr KernelTable kScalar{Isa::scalar, "scalar", dot_scalar, axpy_scalar,
                              mul_acc_scalar, affine_scalar};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace dfilm::kernels
