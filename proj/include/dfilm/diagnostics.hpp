// SPDX-License-Identifier: Apache-2.0
#pragma once

// Toy-scale models and batches for gradient checks and smoke tests.

#include <cstdint>

#include "dfilm/grad_check.hpp"
#include "dfilm/model.hpp"

namespace dfilm {

/// L=2, H=4, F=3, C=3, dialects {"a","b"}, narrow generators.
ModelConfig toy_config(Variant v);

/// Two utterances of lengths 5 and 3 with random frames and labels. Dialect
/// labels are "a" and "b"; M10 feeds the unknown entry for the second one.
PaddedBatch toy_batch(const ModelConfig& config, std::uint64_t seed);

/// Sets every parameter, generator heads included, to uniform(-scale, scale)
/// draws, keeping BN gammas and FiLM gamma biases near 1.
void randomize_params(Model& model, std::uint64_t seed, double scale = 0.5);

/// End-to-end central-difference check of loss_and_grads for one variant
/// (train-mode batch normalization).
GradCheckResult variant_grad_check(Variant v, std::uint64_t seed, double eps = 1e-5);

}  // namespace dfilm
