// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "dfilm/kernels.hpp"
#include "dfilm/ops.hpp"
#include "dfilm/rng.hpp"

using namespace dfilm;
namespace k = dfilm::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

// Sizes around the 4-wide and 8-wide unroll boundaries plus a long one.
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 257, 1000};

}  // namespace

TEST_CASE("scalar kernels match hand values") {
  const k::KernelTable& s = k::scalar_table();
  const double x[] = {1, 2, 3};
  const double y[] = {4, -5, 6};
  CHECK(s.dot(x, y, 3) == 12.0);
  double acc[] = {1, 1, 1};
  s.axpy(2.0, x, acc, 3);
  CHECK(acc[0] == 3.0);
  CHECK(acc[2] == 7.0);
  s.mul_acc(x, y, acc, 3);
  CHECK(acc[1] == -5.0);
  double out[3];
  s.affine(x, y, x, out, 3);
  CHECK(out[0] == 5.0);
  CHECK(out[1] == -8.0);
  CHECK(out[2] == 21.0);
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!k::supported(k::Isa::avx2)) {
    MESSAGE("AVX2 not available on this CPU; equivalence skipped");
    return;
  }
  const k::KernelTable& s = k::scalar_table();
  const k::KernelTable& v = k::table(k::Isa::avx2);
  CHECK(v.isa == k::Isa::avx2);
  Rng rng(42);
  for (std::size_t n : kSizes) {
    CAPTURE(n);
    const auto a = random_vec(n, rng), b = random_vec(n, rng), c = random_vec(n, rng);
    // Reassociated sums: bounded by n * eps * sum|a_i b_i|.
    double mag = 0.0;
    for (std::size_t i = 0; i < n; ++i) mag += std::abs(a[i] * b[i]);
    CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <=
          1e-15 * static_cast<double>(n + 1) * (mag + 1.0));

    // Element-wise kernels differ only by FMA's single rounding.
    auto y1 = c, y2 = c;
    s.axpy(0.37, a.data(), y1.data(), n);
    v.axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (std::abs(y1[i]) + 1.0));

    y1 = c;
    y2 = c;
    s.mul_acc(a.data(), b.data(), y1.data(), n);
    v.mul_acc(a.data(), b.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (std::abs(y1[i]) + 4.0));

    std::vector<double> o1(n), o2(n);
    s.affine(a.data(), b.data(), c.data(), o1.data(), n);
    v.affine(a.data(), b.data(), c.data(), o2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-15 * (std::abs(o1[i]) + 4.0));
  }
}

TEST_CASE("avx2 axpy and mul_acc leave the tail untouched") {
  if (!k::supported(k::Isa::avx2)) return;
  const k::KernelTable& v = k::table(k::Isa::avx2);
  std::vector<double> x(13, 1.0), y(16, 0.0);
  v.axpy(1.0, x.data(), y.data(), 13);
  for (std::size_t i = 0; i < 13; ++i) CHECK(y[i] == 1.0);
  for (std::size_t i = 13; i < 16; ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("higher-level ops agree across ISAs") {
  if (!k::supported(k::Isa::avx2)) return;
  Rng rng(3);
  Tensor a({7, 13}), b({13, 9});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
  const k::Isa before = k::active().isa;
  k::select_isa(k::Isa::scalar);
  const Tensor c_scalar = matmul(a, b);
  k::select_isa(k::Isa::avx2);
  const Tensor c_avx = matmul(a, b);
  k::select_isa(before);
  CHECK(max_abs_diff(c_scalar, c_avx) < 1e-12);
}

TEST_CASE("dispatch honours select_isa and the environment override") {
  const k::Isa before = k::active().isa;
  k::select_isa(k::Isa::scalar);
  CHECK(k::active().isa == k::Isa::scalar);
  CHECK(std::string(k::active().name) == "scalar");
  k::select_isa(before);
  CHECK_THROWS_AS(k::parse_isa("neon9"), ConfigError);
  if (const char* env = std::getenv("DFILM_KERNELS"); env != nullptr && std::string(env) == "scalar") {
    CHECK(before == k::Isa::scalar);
  }
}
