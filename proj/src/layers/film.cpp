// SPDX-License-Identifier: Apache-2.0
#include "dfilm/kernels.hpp"
#include "dfilm/layers.hpp"

namespace dfilm {

std::size_t film_width(CondPosition position, std::size_t hidden) {
  switch (position) {
    case CondPosition::input:
      return 4 * hidden;
    case CondPosition::output:
      return hidden;
    case CondPosition::none:
      break;
  }
  return 0;
}

void FilmParams::validate(std::size_t hidden) const {
  if (gamma.size() != beta.size()) {
    throw ShapeError("FiLM params: gamma has " + std::to_string(gamma.size()) +
                     " layers but beta has " + std::to_string(beta.size()));
  }
  const std::size_t width = film_width(position, hidden);
  for (std::size_t l = 0; l < gamma.size(); ++l) {
    if (gamma[l].shape() != Shape{width} || beta[l].shape() != Shape{width}) {
      throw ShapeError("FiLM params layer " + std::to_string(l + 1) + ": expected width " +
                       std::to_string(width) + ", got gamma " +
                       shape_to_string(gamma[l].shape()) + " beta " +
                       shape_to_string(beta[l].shape()));
    }
  }
}

FilmParams FilmParams::identity(CondPosition position, std::size_t layers,
                                std::size_t hidden) {
  FilmParams p;
  p.position = position;
  const std::size_t width = film_width(position, hidden);
  for (std::size_t l = 0; l < layers; ++l) {
    p.gamma.emplace_back(Shape{width}, 1.0);
    p.beta.emplace_back(Shape{width}, 0.0);
  }
  return p;
}

namespace {
void check_film_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() < 1 || x.rank() > 2 || gamma.rank() != 1 || beta.rank() != 1 ||
      x.cols() != gamma.size() || gamma.size() != beta.size()) {
    throw ShapeError("apply_film: x " + shape_to_string(x.shape()) + ", gamma " +
                     shape_to_string(gamma.shape()) + ", beta " +
                     shape_to_string(beta.shape()));
  }
}
}  // namespace

Tensor apply_film(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  check_film_shapes(x, gamma, beta);
  Tensor out(x.shape());
  const std::size_t w = x.cols();
  for (std::size_t t = 0; t < x.rows(); ++t) {
    kernels::affine(x.data() + t * w, gamma.data(), beta.data(), out.data() + t * w, w);
  }
  return out;
}

FilmBackward apply_film_backward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& upstream) {
  check_film_shapes(x, gamma, gamma);
  if (upstream.shape() != x.shape()) {
    throw ShapeError("apply_film_backward: upstream " + shape_to_string(upstream.shape()) +
                     " vs x " + shape_to_string(x.shape()));
  }
  const std::size_t w = x.cols();
  FilmBackward g{Tensor(x.shape()), Tensor(gamma.shape()), Tensor(gamma.shape())};
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const double* up = upstream.data() + t * w;
    kernels::mul_acc(up, x.data() + t * w, g.dgamma.data(), w);
    kernels::axpy(1.0, up, g.dbeta.data(), w);
    kernels::mul_acc(up, gamma.data(), g.dx.data() + t * w, w);
  }
  return g;
}

}  // namespace dfilm
