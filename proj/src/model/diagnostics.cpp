// SPDX-License-Identifier: Apache-2.0
#include "dfilm/diagnostics.hpp"

#include <string>

#include "dfilm/rng.hpp"

namespace dfilm {

ModelConfig toy_config(Variant v) {
  ModelConfig base;
  base.num_layers = 2;
  base.hidden = 4;
  base.input_dim = 3;
  base.num_classes = 3;
  base.lookahead_tau = 2;
  base.generator = {5, 3, 5};
  return variant_config(v, base, {"a", "b"});
}

PaddedBatch toy_batch(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.feature_dim = config.input_dim;
  d.num_classes = config.num_classes;
  const std::size_t lengths[] = {5, 3};
  const char* dialects[] = {"a", "b"};
  for (std::size_t u = 0; u < 2; ++u) {
    Utterance utt;
    utt.id = "toy-" + std::to_string(u);
    utt.dialect = dialects[u];
    utt.frames = Tensor({lengths[u], config.input_dim});
    for (std::size_t i = 0; i < utt.frames.size(); ++i) utt.frames[i] = rng.normal();
    for (std::size_t t = 0; t < lengths[u]; ++t) {
      utt.labels.push_back(static_cast<int>(rng.below(config.num_classes)));
    }
    d.utterances.push_back(std::move(utt));
  }
  PaddedBatch batch = make_batch(d, {0, 1});
  if (config.vocabulary.has_unknown()) batch.dialects[1] = std::string(DialectVocabulary::kUnknown);
  return batch;
}

void randomize_params(Model& model, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& e : model.params.entries()) {
    const bool near_one = e.name.ends_with("bn_gamma") || e.name.ends_with("b_gamma");
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      e.value[i] = (near_one ? 1.0 : 0.0) + rng.uniform(-scale, scale);
    }
  }
}

GradCheckResult variant_grad_check(Variant v, std::uint64_t seed, double eps) {
  Model model = build_model(toy_config(v), seed);
  randomize_params(model, seed + 1);
  const PaddedBatch batch = toy_batch(model.config, seed + 2);
  loss_and_grads(model, batch);
  const Model frozen = model;
  auto objective = [&](const ParamStore& p) {
    Model m = frozen;
    m.params = p;
    return loss_only(m, batch, Mode::train);
  };
  return grad_check(objective, model.params, eps);
}

}  // namespace dfilm
