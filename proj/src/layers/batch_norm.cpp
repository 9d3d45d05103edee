// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "dfilm/layers.hpp"

namespace dfilm {

BatchNormState BatchNormState::fresh(std::size_t width) {
  BatchNormState s;
  s.running_mean = Tensor({width});
  s.running_var = Tensor({width}, 1.0);
  return s;
}

void BatchNormState::validate() const {
  if (running_mean.shape() != running_var.shape() || running_mean.rank() != 1) {
    throw ShapeError("batch norm: running stats shapes " +
                     shape_to_string(running_mean.shape()) + " / " +
                     shape_to_string(running_var.shape()));
  }
  if (!(epsilon > 0.0)) throw ConfigError("batch norm: epsilon must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ConfigError("batch norm: momentum must lie in [0, 1]");
  }
  for (std::size_t i = 0; i < running_var.size(); ++i) {
    if (!(running_var[i] >= 0.0)) {
      throw NumericError("batch norm: negative or non-finite running variance");
    }
  }
  running_mean.require_finite("batch norm running mean");
}

namespace {

bool is_real(const std::span<const FrameMask> masks, std::size_t seq, std::size_t t) {
  if (masks.empty() || masks[seq].empty()) return true;
  return masks[seq][t] != 0.0;
}

}  // namespace

std::vector<Tensor> batch_norm_forward(std::span<const Tensor> inputs,
                                       std::span<const FrameMask> masks,
                                       const Tensor& gamma, const Tensor& beta,
                                       const BatchNormState& state,
                                       BatchNormCache* cache) {
  const std::size_t width = gamma.size();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width} ||
      state.running_mean.shape() != Shape{width}) {
    throw ShapeError("batch norm: gamma " + shape_to_string(gamma.shape()) + ", beta " +
                     shape_to_string(beta.shape()) + ", running mean " +
                     shape_to_string(state.running_mean.shape()));
  }
  if (!masks.empty() && masks.size() != inputs.size()) {
    throw ShapeError("batch norm: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(inputs.size()) + " sequences");
  }
  std::size_t frames = 0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const Tensor& x = inputs[s];
    if (x.rank() != 2 || x.dim(1) != width) {
      throw ShapeError("batch norm: sequence " + shape_to_string(x.shape()) +
                       " does not have width " + std::to_string(width));
    }
    if (!masks.empty() && !masks[s].empty() && masks[s].size() != x.dim(0)) {
      throw ShapeError("batch norm: mask length does not match sequence length");
    }
    for (std::size_t t = 0; t < x.dim(0); ++t) frames += is_real(masks, s, t) ? 1 : 0;
  }

  Tensor mean({width});
  Tensor var({width});
  if (state.mode == BnMode::train) {
    if (frames < 2) {
      throw NumericError("batch norm: train mode needs at least 2 unpadded frames, got " +
                         std::to_string(frames));
    }
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      for (std::size_t t = 0; t < inputs[s].dim(0); ++t) {
        if (!is_real(masks, s, t)) continue;
        for (std::size_t k = 0; k < width; ++k) mean[k] += inputs[s](t, k);
      }
    }
    const double inv_n = 1.0 / static_cast<double>(frames);
    for (std::size_t k = 0; k < width; ++k) mean[k] *= inv_n;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      for (std::size_t t = 0; t < inputs[s].dim(0); ++t) {
        if (!is_real(masks, s, t)) continue;
        for (std::size_t k = 0; k < width; ++k) {
          const double d = inputs[s](t, k) - mean[k];
          var[k] += d * d;
        }
      }
    }
    for (std::size_t k = 0; k < width; ++k) var[k] *= inv_n;
  } else {
    mean = state.running_mean;
    var = state.running_var;
    for (std::size_t k = 0; k < width; ++k) {
      if (!(var[k] >= 0.0)) throw NumericError("batch norm: negative running variance");
    }
  }

  Tensor inv_std({width});
  for (std::size_t k = 0; k < width; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + state.epsilon);

  std::vector<Tensor> out;
  std::vector<Tensor> normalized;
  out.reserve(inputs.size());
  normalized.reserve(inputs.size());
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const Tensor& x = inputs[s];
    Tensor xhat(x.shape());
    Tensor y(x.shape());
    for (std::size_t t = 0; t < x.dim(0); ++t) {
      if (!is_real(masks, s, t)) continue;
      for (std::size_t k = 0; k < width; ++k) {
        const double n = (x(t, k) - mean[k]) * inv_std[k];
        xhat(t, k) = n;
        y(t, k) = gamma[k] * n + beta[k];
      }
    }
    out.push_back(std::move(y));
    normalized.push_back(std::move(xhat));
  }

  if (cache != nullptr) {
    cache->mode = state.mode;
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
    cache->masks.assign(masks.begin(), masks.end());
    cache->frames = frames;
  }
  return out;
}

void commit_running_stats(BatchNormState& state, const BatchNormCache& cache) {
  if (cache.mode != BnMode::train) return;
  const double m = state.momentum;
  for (std::size_t k = 0; k < state.running_mean.size(); ++k) {
    state.running_mean[k] = (1.0 - m) * state.running_mean[k] + m * cache.mean[k];
    state.running_var[k] = (1.0 - m) * state.running_var[k] + m * cache.var[k];
  }
}

std::vector<Tensor> sequence_batch_norm(std::span<const Tensor> preacts,
                                        std::span<const FrameMask> masks,
                                        const Tensor& gamma, const Tensor& beta,
                                        BatchNormState& state) {
  BatchNormCache cache;
  auto out = batch_norm_forward(preacts, masks, gamma, beta, state, &cache);
  commit_running_stats(state, cache);
  return out;
}

std::vector<Tensor> batch_norm_backward(const BatchNormCache& cache,
                                        const Tensor& gamma,
                                        std::span<const Tensor> upstream,
                                        Tensor& dgamma, Tensor& dbeta) {
  const std::size_t width = gamma.size();
  if (upstream.size() != cache.normalized.size()) {
    throw ShapeError("batch norm backward: upstream/cache sequence count mismatch");
  }
  const std::span<const FrameMask> masks(cache.masks);

  // dxhat = upstream * gamma on real frames; pooled sums for the train path.
  Tensor sum_dxhat({width});
  Tensor sum_dxhat_xhat({width});
  for (std::size_t s = 0; s < upstream.size(); ++s) {
    const Tensor& up = upstream[s];
    const Tensor& xhat = cache.normalized[s];
    if (up.shape() != xhat.shape()) {
      throw ShapeError("batch norm backward: upstream " + shape_to_string(up.shape()) +
                       " vs cached " + shape_to_string(xhat.shape()));
    }
    for (std::size_t t = 0; t < up.dim(0); ++t) {
      if (!is_real(masks, s, t)) continue;
      for (std::size_t k = 0; k < width; ++k) {
        const double g = up(t, k);
        dgamma[k] += g * xhat(t, k);
        dbeta[k] += g;
        const double dxh = g * gamma[k];
        sum_dxhat[k] += dxh;
        sum_dxhat_xhat[k] += dxh * xhat(t, k);
      }
    }
  }

  std::vector<Tensor> dx;
  dx.reserve(upstream.size());
  const bool train = cache.mode == BnMode::train;
  const double n = static_cast<double>(cache.frames);
  for (std::size_t s = 0; s < upstream.size(); ++s) {
    const Tensor& up = upstream[s];
    const Tensor& xhat = cache.normalized[s];
    Tensor d(up.shape());
    for (std::size_t t = 0; t < up.dim(0); ++t) {
      if (!is_real(masks, s, t)) continue;
      for (std::size_t k = 0; k < width; ++k) {
        const double dxh = up(t, k) * gamma[k];
        if (train) {
          d(t, k) = cache.inv_std[k] / n *
                    (n * dxh - sum_dxhat[k] - xhat(t, k) * sum_dxhat_xhat[k]);
        } else {
          d(t, k) = dxh * cache.inv_std[k];
        }
      }
    }
    dx.push_back(std::move(d));
  }
  return dx;
}

}  // namespace dfilm
