// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>

#include "dfilm/tensor.hpp"

namespace dfilm {

/// Standard matrix product of [m,k] by [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Accumulating products. Rank-1 operands are treated as a single row.
// c += a * b        a:[m,k] b:[k,n] c:[m,n]
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& c);
// c += a^T * b      a:[m,k] b:[m,n] c:[k,n]
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c);
// c += a * b^T      a:[m,n] b:[k,n] c:[m,k]
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c);

/// y += x * W for a row vector x:[k] and W:[k,n]; y:[n].
void vec_mat_acc(std::span<const double> x, const Tensor& w, std::span<double> y);
/// y += W * g for W:[k,n], g:[n]; y:[k] (the transpose of vec_mat_acc).
void mat_vec_acc(const Tensor& w, std::span<const double> g, std::span<double> y);

enum class PointwiseOp { tanh, sigmoid, add, mul };

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Unary pointwise op (tanh or sigmoid).
Tensor pointwise(PointwiseOp op, const Tensor& a);
/// Binary pointwise op (add or mul); shapes must match.
Tensor pointwise(PointwiseOp op, const Tensor& a, const Tensor& b);

inline Tensor tanh(const Tensor& a) { return pointwise(PointwiseOp::tanh, a); }
inline Tensor sigmoid(const Tensor& a) { return pointwise(PointwiseOp::sigmoid, a); }
inline Tensor add(const Tensor& a, const Tensor& b) {
  return pointwise(PointwiseOp::add, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return pointwise(PointwiseOp::mul, a, b);
}

/// Mean of the rows of seq:[T,H] whose mask entry is nonzero.
/// Throws NumericError when the mask selects no rows.
Tensor masked_mean_over_time(const Tensor& seq, std::span<const double> mask);
/// Unmasked variant: mean over all T rows.
Tensor mean_over_time(const Tensor& seq);

}  // namespace dfilm
