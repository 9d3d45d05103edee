// SPDX-License-Identifier: Apache-2.0
#pragma once

// Recurrent building blocks: FiLM modulation, sequence-wise batch
// normalization of the input-to-hidden pre-activation, the LSTM recurrence and
// the per-channel lookahead convolution. Each block has a forward pass that
// fills a cache and an analytic backward pass that consumes it.
//
// Sequences are [T, width] tensors. LSTM gate blocks are laid out in the
// fixed order (input i, forget f, cell g, output o), each H wide.

#include <cstddef>
#include <span>
#include <vector>

#include "dfilm/tensor.hpp"

namespace dfilm {

// ---------------------------------------------------------------------------
// FiLM

/// Where generated scale/shift vectors are applied inside a layer.
///   input:  the batch-normalized input-to-hidden pre-activation (width 4H)
///   output: the layer output after lookahead convolution (width H)
enum class CondPosition { none, input, output };

/// Modulation width for one layer of hidden size H.
std::size_t film_width(CondPosition position, std::size_t hidden);

/// Per-layer scale/shift vectors for one utterance.
struct FilmParams {
  CondPosition position = CondPosition::none;
  std::vector<Tensor> gamma;
  std::vector<Tensor> beta;

  std::size_t num_layers() const noexcept { return gamma.size(); }
  /// Throws ShapeError unless every layer has gamma/beta of film_width().
  void validate(std::size_t hidden) const;
  /// gamma = 1, beta = 0 on every layer.
  static FilmParams identity(CondPosition position, std::size_t layers,
                             std::size_t hidden);
};

/// x_hat[t,k] = gamma[k] * x[t,k] + beta[k]. x may be rank 1 or 2.
Tensor apply_film(const Tensor& x, const Tensor& gamma, const Tensor& beta);

struct FilmBackward {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
FilmBackward apply_film_backward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& upstream);

// ---------------------------------------------------------------------------
// Sequence-wise batch normalization

enum class BnMode { train, infer };

/// Running statistics and hyperparameters. The affine pair (gamma_bn,
/// beta_bn) is trainable and lives in the model's ParamStore.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double epsilon = 1e-5;
  double momentum = 0.01;
  BnMode mode = BnMode::train;

  static BatchNormState fresh(std::size_t width);
  void validate() const;
};

/// Per-sequence frame mask: 1 marks a real frame, 0 padding. An empty mask
/// means every frame is real.
using FrameMask = std::vector<double>;

struct BatchNormCache {
  BnMode mode = BnMode::train;
  Tensor mean;
  Tensor var;
  Tensor inv_std;
  std::vector<Tensor> normalized;  // x_hat, zero on padded rows
  std::vector<FrameMask> masks;
  std::size_t frames = 0;
};

/// Normalizes every sequence with statistics pooled over all unpadded frames
/// of the batch (train) or with the running statistics (infer). Padded rows
/// of the output are zero. Does not touch `state`.
std::vector<Tensor> batch_norm_forward(std::span<const Tensor> inputs,
                                       std::span<const FrameMask> masks,
                                       const Tensor& gamma, const Tensor& beta,
                                       const BatchNormState& state,
                                       BatchNormCache* cache);

/// running <- (1 - momentum) * running + momentum * batch; train caches only.
void commit_running_stats(BatchNormState& state, const BatchNormCache& cache);

/// batch_norm_forward followed by commit_running_stats in train mode.
std::vector<Tensor> sequence_batch_norm(std::span<const Tensor> preacts,
                                        std::span<const FrameMask> masks,
                                        const Tensor& gamma, const Tensor& beta,
                                        BatchNormState& state);

/// Returns d(loss)/d(input) per sequence; accumulates into dgamma/dbeta.
std::vector<Tensor> batch_norm_backward(const BatchNormCache& cache,
                                        const Tensor& gamma,
                                        std::span<const Tensor> upstream,
                                        Tensor& dgamma, Tensor& dbeta);

// ---------------------------------------------------------------------------
// LSTM

struct LstmWeights {
  const Tensor& w_x;   // [in, 4H]
  const Tensor& w_h;   // [H, 4H]
  const Tensor& bias;  // [4H]

  std::size_t hidden() const { return w_h.dim(0); }
  std::size_t input_width() const { return w_x.dim(0); }
  void validate() const;
};

struct LstmRecurrenceCache {
  Tensor gates;      // activated (i, f, g, o), [T, 4H]
  Tensor cells;      // c_t, [T, H]
  Tensor cell_tanh;  // tanh(c_t), [T, H]
  Tensor hiddens;    // h_t, [T, H]
  Tensor h0;
  Tensor c0;
};

/// Runs the recurrence over pre-activations z:[T,4H] (everything except the
/// recurrent term and bias). h0/c0 may be empty for zero initial state.
Tensor lstm_recurrence_forward(const Tensor& z, const Tensor& w_h, const Tensor& bias,
                               const Tensor& h0, const Tensor& c0,
                               LstmRecurrenceCache* cache);

/// Back-propagates dh:[T,H] through time. Returns dz:[T,4H]; accumulates into
/// dw_h and dbias.
Tensor lstm_recurrence_backward(const LstmRecurrenceCache& cache, const Tensor& w_h,
                                const Tensor& upstream, Tensor& dw_h, Tensor& dbias);

struct LstmCache {
  Tensor inputs;
  BatchNormCache bn;
  Tensor normalized;  // BN output before input-position FiLM
  Tensor film_gamma;  // empty when no input-position FiLM
  LstmRecurrenceCache recurrence;
};

struct LstmForwardResult {
  Tensor hiddens;
  LstmCache cache;
};

struct LstmGrads {
  Tensor dinputs;
  Tensor dw_x, dw_h, dbias;
  Tensor dbn_gamma, dbn_beta;
  Tensor dfilm_gamma, dfilm_beta;  // empty without input FiLM
};

/// One sequence through BN(W_x x) -> optional FiLM -> LSTM recurrence.
/// In train mode BN uses this sequence's own statistics and updates `bn`.
LstmForwardResult lstm_forward(const Tensor& inputs, const LstmWeights& weights,
                               const Tensor& bn_gamma, const Tensor& bn_beta,
                               BatchNormState& bn, const Tensor* film_gamma = nullptr,
                               const Tensor* film_beta = nullptr,
                               const Tensor& h0 = {}, const Tensor& c0 = {});

LstmGrads lstm_backward(const LstmCache& cache, const LstmWeights& weights,
                        const Tensor& bn_gamma, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Lookahead convolution

/// out[t,k] = sum_{j=0..tau} w[j,k] * h[t+j,k], h past the end is zero.
/// w is [tau+1, H].
Tensor lookahead_forward(const Tensor& h, const Tensor& w);

/// Returns dh; accumulates into dw.
Tensor lookahead_backward(const Tensor& h, const Tensor& w, const Tensor& upstream,
                          Tensor& dw);

}  // namespace dfilm
