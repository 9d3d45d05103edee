// SPDX-License-Identifier: Apache-2.0
#include "dfilm/kernels.hpp"
#include "dfilm/layers.hpp"

namespace dfilm {
namespace {
void check(const Tensor& h, const Tensor& w) {
  if (h.rank() != 2 || w.rank() != 2 || w.dim(1) != h.dim(1) || w.dim(0) == 0) {
    throw ShapeError("lookahead: hiddens " + shape_to_string(h.shape()) + " with W " +
                     shape_to_string(w.shape()));
  }
}
}  // namespace

Tensor lookahead_forward(const Tensor& h, const Tensor& w) {
  check(h, w);
  const std::size_t steps = h.dim(0), width = h.dim(1), taps = w.dim(0);
  Tensor out(h.shape());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < taps && t + j < steps; ++j) {
      kernels::mul_acc(w.data() + j * width, h.data() + (t + j) * width,
                       out.data() + t * width, width);
    }
  }
  return out;
}

Tensor lookahead_backward(const Tensor& h, const Tensor& w, const Tensor& upstream,
                          Tensor& dw) {
  check(h, w);
  if (upstream.shape() != h.shape() || dw.shape() != w.shape()) {
    throw ShapeError("lookahead backward: upstream " + shape_to_string(upstream.shape()) +
                     " vs hiddens " + shape_to_string(h.shape()));
  }
  const std::size_t steps = h.dim(0), width = h.dim(1), taps = w.dim(0);
  Tensor dh(h.shape());
  for (std::size_t t = 0; t < steps; ++t) {
    const double* up = upstream.data() + t * width;
    for (std::size_t j = 0; j < taps && t + j < steps; ++j) {
      kernels::mul_acc(up, h.data() + (t + j) * width, dw.data() + j * width, width);
      kernels::mul_acc(up, w.data() + j * width, dh.data() + (t + j) * width, width);
    }
  }
  return dh;
}

}  // namespace dfilm
