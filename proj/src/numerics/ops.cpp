// SPDX-License-Identifier: Apache-2.0
#include "dfilm/ops.hpp"

#include "dfilm/kernels.hpp"

namespace dfilm {
namespace {

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                   " vs " + shape_to_string(b.shape()));
}

void require_matrix_like(const char* op, const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a, b);
  Tensor c({a.dim(0), b.dim(1)});
  matmul_acc(a, b, c);
  return c;
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  require_matrix_like("matmul_acc", a);
  require_matrix_like("matmul_acc", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) mismatch("matmul_acc", a, b);
  if (c.rows() != m || c.cols() != n) mismatch("matmul_acc", a, c);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ad[i * k + p];
      if (s != 0.0) kernels::axpy(s, bd + p * n, cd + i * n, n);
    }
  }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  require_matrix_like("matmul_tn_acc", a);
  require_matrix_like("matmul_tn_acc", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != m) mismatch("matmul_tn_acc", a, b);
  if (c.rows() != k || c.cols() != n) mismatch("matmul_tn_acc", a, c);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ad[i * k + p];
      if (s != 0.0) kernels::axpy(s, bd + i * n, cd + p * n, n);
    }
  }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  require_matrix_like("matmul_nt_acc", a);
  require_matrix_like("matmul_nt_acc", b);
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  if (b.cols() != n) mismatch("matmul_nt_acc", a, b);
  if (c.rows() != m || c.cols() != k) mismatch("matmul_nt_acc", a, c);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      cd[i * k + j] += kernels::dot(ad + i * n, bd + j * n, n);
    }
  }
}

void vec_mat_acc(std::span<const double> x, const Tensor& w, std::span<double> y) {
  if (w.rank() != 2 || w.dim(0) != x.size() || w.dim(1) != y.size()) {
    throw ShapeError("vec_mat_acc: x[" + std::to_string(x.size()) + "] * W" +
                     shape_to_string(w.shape()) + " -> y[" + std::to_string(y.size()) +
                     "]");
  }
  const std::size_t n = y.size();
  for (std::size_t p = 0; p < x.size(); ++p) {
    if (x[p] != 0.0) kernels::axpy(x[p], w.data() + p * n, y.data(), n);
  }
}

void mat_vec_acc(const Tensor& w, std::span<const double> g, std::span<double> y) {
  if (w.rank() != 2 || w.dim(0) != y.size() || w.dim(1) != g.size()) {
    throw ShapeError("mat_vec_acc: W" + shape_to_string(w.shape()) + " * g[" +
                     std::to_string(g.size()) + "] -> y[" + std::to_string(y.size()) +
                     "]");
  }
  const std::size_t n = g.size();
  for (std::size_t p = 0; p < y.size(); ++p) {
    y[p] += kernels::dot(w.data() + p * n, g.data(), n);
  }
}

Tensor pointwise(PointwiseOp op, const Tensor& a) {
  Tensor out(a.shape());
  switch (op) {
    case PointwiseOp::tanh:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
      break;
    case PointwiseOp::sigmoid:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = sigmoid(a[i]);
      break;
    default:
      throw ShapeError("pointwise: binary op called with one argument");
  }
  return out;
}

Tensor pointwise(PointwiseOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch("pointwise", a, b);
  Tensor out(a.shape());
  switch (op) {
    case PointwiseOp::add:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      break;
    case PointwiseOp::mul:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      break;
    default:
      throw ShapeError("pointwise: unary op called with two arguments");
  }
  return out;
}

Tensor masked_mean_over_time(const Tensor& seq, std::span<const double> mask) {
  if (seq.rank() != 2 || mask.size() != seq.dim(0)) {
    throw ShapeError("masked_mean_over_time: seq " + shape_to_string(seq.shape()) +
                     " with mask of length " + std::to_string(mask.size()));
  }
  const std::size_t h = seq.dim(1);
  Tensor out({h});
  std::size_t count = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t] == 0.0) continue;
    ++count;
    for (std::size_t k = 0; k < h; ++k) out[k] += seq(t, k);
  }
  if (count == 0) throw NumericError("masked_mean_over_time: mask selects no frames");
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t k = 0; k < h; ++k) out[k] *= inv;
  return out;
}

Tensor mean_over_time(const Tensor& seq) {
  std::vector<double> mask(seq.rank() == 2 ? seq.dim(0) : 0, 1.0);
  return masked_mean_over_time(seq, mask);
}

}  // namespace dfilm
