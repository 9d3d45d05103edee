// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "dfilm/kernels.hpp"
#include "dfilm/layers.hpp"
#include "dfilm/ops.hpp"

namespace dfilm {

void LstmWeights::validate() const {
  if (w_h.rank() != 2 || w_h.dim(1) != 4 * w_h.dim(0)) {
    throw ShapeError("LSTM: W_h must be [H, 4H], got " + shape_to_string(w_h.shape()));
  }
  const std::size_t gates = w_h.dim(1);
  if (w_x.rank() != 2 || w_x.dim(1) != gates) {
    throw ShapeError("LSTM: W_x must be [in, " + std::to_string(gates) + "], got " +
                     shape_to_string(w_x.shape()));
  }
  if (bias.shape() != Shape{gates}) {
    throw ShapeError("LSTM: bias must be [" + std::to_string(gates) + "], got " +
                     shape_to_string(bias.shape()));
  }
}

Tensor lstm_recurrence_forward(const Tensor& z, const Tensor& w_h, const Tensor& bias,
                               const Tensor& h0, const Tensor& c0,
                               LstmRecurrenceCache* cache) {
  const std::size_t hidden = w_h.dim(0);
  const std::size_t g4 = 4 * hidden;
  if (z.rank() != 2 || z.dim(1) != g4 || bias.size() != g4) {
    throw ShapeError("LSTM recurrence: z " + shape_to_string(z.shape()) + " with W_h " +
                     shape_to_string(w_h.shape()));
  }
  const Tensor h_init = h0.empty() ? Tensor({hidden}) : h0;
  const Tensor c_init = c0.empty() ? Tensor({hidden}) : c0;
  if (h_init.shape() != Shape{hidden} || c_init.shape() != Shape{hidden}) {
    throw ShapeError("LSTM recurrence: initial state must be [" + std::to_string(hidden) + "]");
  }

  const std::size_t steps = z.dim(0);
  Tensor gates({steps, g4});
  Tensor cells({steps, hidden});
  Tensor cell_tanh({steps, hidden});
  Tensor hiddens({steps, hidden});
  std::vector<double> pre(g4);

  for (std::size_t t = 0; t < steps; ++t) {
    const auto z_t = z.row(t);
    for (std::size_t k = 0; k < g4; ++k) pre[k] = z_t[k] + bias[k];
    const double* h_prev = t ? hiddens.data() + (t - 1) * hidden : h_init.data();
    const double* c_prev = t ? cells.data() + (t - 1) * hidden : c_init.data();
    vec_mat_acc({h_prev, hidden}, w_h, pre);

    auto gate = gates.row(t);
    for (std::size_t k = 0; k < hidden; ++k) {
      gate[k] = sigmoid(pre[k]);
      gate[hidden + k] = sigmoid(pre[hidden + k]);
      gate[2 * hidden + k] = std::tanh(pre[2 * hidden + k]);
      gate[3 * hidden + k] = sigmoid(pre[3 * hidden + k]);
    }
    for (std::size_t k = 0; k < hidden; ++k) {
      const double c = gate[hidden + k] * c_prev[k] + gate[k] * gate[2 * hidden + k];
      const double tc = std::tanh(c);
      cells(t, k) = c;
      cell_tanh(t, k) = tc;
      hiddens(t, k) = gate[3 * hidden + k] * tc;
    }
  }
  if (!hiddens.all_finite()) throw NumericError("LSTM: non-finite activation");

  if (cache != nullptr) {
    cache->gates = std::move(gates);
    cache->cells = std::move(cells);
    cache->cell_tanh = std::move(cell_tanh);
    cache->hiddens = hiddens;
    cache->h0 = h_init;
    cache->c0 = c_init;
  }
  return hiddens;
}

Tensor lstm_recurrence_backward(const LstmRecurrenceCache& cache, const Tensor& w_h,
                                const Tensor& upstream, Tensor& dw_h, Tensor& dbias) {
  const std::size_t hidden = w_h.dim(0);
  const std::size_t g4 = 4 * hidden;
  if (upstream.shape() != cache.hiddens.shape()) {
    throw ShapeError("LSTM backward: upstream " + shape_to_string(upstream.shape()) +
                     " vs cached hiddens " + shape_to_string(cache.hiddens.shape()));
  }
  const std::size_t steps = upstream.dim(0);
  Tensor dz({steps, g4});
  std::vector<double> dh_next(hidden, 0.0), dc_next(hidden, 0.0);

  for (std::size_t t = steps; t-- > 0;) {
    const auto gate = cache.gates.row(t);
    const double* c_prev = t ? cache.cells.data() + (t - 1) * hidden : cache.c0.data();
    const double* h_prev = t ? cache.hiddens.data() + (t - 1) * hidden : cache.h0.data();
    auto da = dz.row(t);
    for (std::size_t k = 0; k < hidden; ++k) {
      const double i = gate[k], f = gate[hidden + k], g = gate[2 * hidden + k],
                   o = gate[3 * hidden + k];
      const double tc = cache.cell_tanh(t, k);
      const double dh_k = upstream(t, k) + dh_next[k];
      const double dc = dh_k * o * (1.0 - tc * tc) + dc_next[k];
      da[k] = dc * g * i * (1.0 - i);
      da[hidden + k] = dc * c_prev[k] * f * (1.0 - f);
      da[2 * hidden + k] = dc * i * (1.0 - g * g);
      da[3 * hidden + k] = dh_k * tc * o * (1.0 - o);
      dc_next[k] = dc * f;
    }
    kernels::axpy(1.0, da.data(), dbias.data(), g4);
    for (std::size_t p = 0; p < hidden; ++p) {
      if (h_prev[p] != 0.0) kernels::axpy(h_prev[p], da.data(), dw_h.data() + p * g4, g4);
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    mat_vec_acc(w_h, {da.data(), g4}, dh_next);
  }
  return dz;
}

LstmForwardResult lstm_forward(const Tensor& inputs, const LstmWeights& weights,
                               const Tensor& bn_gamma, const Tensor& bn_beta,
                               BatchNormState& bn, const Tensor* film_gamma,
                               const Tensor* film_beta, const Tensor& h0,
                               const Tensor& c0) {
  weights.validate();
  if (inputs.rank() != 2 || inputs.dim(1) != weights.input_width()) {
    throw ShapeError("LSTM: inputs " + shape_to_string(inputs.shape()) +
                     " do not match W_x " + shape_to_string(weights.w_x.shape()));
  }
  if ((film_gamma == nullptr) != (film_beta == nullptr)) {
    throw ShapeError("LSTM: FiLM gamma and beta must be given together");
  }
  LstmForwardResult r;
  r.cache.inputs = inputs;

  Tensor preact({inputs.dim(0), weights.w_x.dim(1)});
  matmul_acc(inputs, weights.w_x, preact);
  auto normalized =
      batch_norm_forward({&preact, 1}, {}, bn_gamma, bn_beta, bn, &r.cache.bn);
  commit_running_stats(bn, r.cache.bn);
  r.cache.normalized = std::move(normalized[0]);

  Tensor z = r.cache.normalized;
  if (film_gamma != nullptr) {
    z = apply_film(r.cache.normalized, *film_gamma, *film_beta);
    r.cache.film_gamma = *film_gamma;
  }
  r.hiddens = lstm_recurrence_forward(z, weights.w_h, weights.bias, h0, c0,
                                      &r.cache.recurrence);
  return r;
}

LstmGrads lstm_backward(const LstmCache& cache, const LstmWeights& weights,
                        const Tensor& bn_gamma, const Tensor& upstream) {
  LstmGrads g;
  g.dw_x = Tensor(weights.w_x.shape());
  g.dw_h = Tensor(weights.w_h.shape());
  g.dbias = Tensor(weights.bias.shape());
  g.dbn_gamma = Tensor(bn_gamma.shape());
  g.dbn_beta = Tensor(bn_gamma.shape());

  Tensor dz = lstm_recurrence_backward(cache.recurrence, weights.w_h, upstream, g.dw_h,
                                       g.dbias);
  Tensor dnorm;
  if (!cache.film_gamma.empty()) {
    auto fb = apply_film_backward(cache.normalized, cache.film_gamma, dz);
    dnorm = std::move(fb.dx);
    g.dfilm_gamma = std::move(fb.dgamma);
    g.dfilm_beta = std::move(fb.dbeta);
  } else {
    dnorm = std::move(dz);
  }
  auto dpre = batch_norm_backward(cache.bn, bn_gamma, {&dnorm, 1}, g.dbn_gamma, g.dbn_beta);
  matmul_tn_acc(cache.inputs, dpre[0], g.dw_x);
  g.dinputs = Tensor(cache.inputs.shape());
  matmul_nt_acc(dpre[0], weights.w_x, g.dinputs);
  return g;
}

}  // namespace dfilm
