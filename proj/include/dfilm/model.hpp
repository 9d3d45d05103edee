// SPDX-License-Identifier: Apache-2.0
#pragma once

// The acoustic model family: L batch-normalized LSTM layers with lookahead
// convolution, optional FiLM conditioning at the layer input or output,
// optional one-hot dialect input at the first layer, and a softmax head.
//
// Parameter names:
//   layer<l>.{w_x,w_h,bias,bn_gamma,bn_beta,lookahead}   l = 1..L
//   softmax.{w,b}
//   gen.*                                                 see conditioning.hpp

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfilm/conditioning.hpp"
#include "dfilm/data.hpp"
#include "dfilm/layers.hpp"
#include "dfilm/param_store.hpp"

namespace dfilm {

/// Rows of the ablation table.
enum class Variant { M1 = 1, M2, M3, M4, M5, M6, M7, M8, M9, M10 };

inline constexpr Variant kAllVariants[] = {Variant::M1, Variant::M2, Variant::M3,
                                           Variant::M4, Variant::M5, Variant::M6,
                                           Variant::M7, Variant::M8, Variant::M9,
                                           Variant::M10};

std::string variant_name(Variant v);         // "M1"
std::string variant_description(Variant v);  // "Dialect-unaware"
Variant parse_variant(const std::string& name);

std::string to_string(CondSource s);
std::string to_string(CondPosition p);
CondSource parse_cond_source(const std::string& s);
CondPosition parse_cond_position(const std::string& s);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden = 16;
  std::size_t input_dim = 8;
  std::size_t num_classes = 6;
  std::size_t lookahead_tau = 2;
  CondSource cond_source = CondSource::none;
  CondPosition cond_position = CondPosition::none;
  bool dialect_aware_input = false;
  DialectVocabulary vocabulary;
  double unknown_prob = 0.0;
  GeneratorWidths generator;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.01;

  /// Throws ConfigError when the family rules are violated.
  void validate() const;
  /// True when forward needs a dialect label per utterance.
  bool uses_dialect() const noexcept;
  /// Width of the tensor fed to layer l (1-based).
  std::size_t layer_input_width(std::size_t layer) const;
  ConditioningLayout conditioning_layout() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Derives the configuration of `v` from a base geometry. `dialects` are the
/// training dialect names; M10 adds the unknown entry and sets
/// unknown_prob (default 0.1). M2 has the M1 configuration.
ModelConfig variant_config(Variant v, const ModelConfig& base,
                           const std::vector<std::string>& dialects,
                           double unknown_prob = 0.1);

std::string config_to_json(const ModelConfig& c);
/// Rejects unknown keys.
ModelConfig config_from_json(const std::string& text);

struct Model {
  ModelConfig config;
  ParamStore params;
  std::vector<BatchNormState> bn;  // one per layer

  friend bool operator==(const Model& a, const Model& b);
};

/// Deterministic in (config, seed).
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Exact number of trainable scalars of a model built from `config`.
std::size_t count_params(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward / backward

enum class Mode { train, infer };

struct SeqLayerCache {
  Tensor input;    // [T, in]
  Tensor bn_out;   // BN output before input FiLM, [T, 4H]
  LstmRecurrenceCache recurrence;
  Tensor lookahead_out;  // before output FiLM, [T, H]
  Tensor output;         // what the next layer consumes, [T, H]
  SummaryCache summary;
  LayerGenCache generator;
};

struct LayerCache {
  std::vector<SeqLayerCache> seqs;
  BatchNormCache bn;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<ExternalCache> external;
  std::vector<std::size_t> lengths;
  std::vector<Tensor> probs;  // per utterance [T, C]
  bool film_injected = false;
};

struct ForwardResult {
  Tensor logits;                // [B, T_max, C], zero on padding
  std::vector<FilmParams> film;  // per utterance, empty for unconditioned models
  ForwardCache cache;
};

/// Runs the model on a padded batch. Masks must be prefix masks. When
/// `film_override` is given (one FilmParams per utterance), those vectors
/// replace the generator output.
ForwardResult forward(const Model& model, const PaddedBatch& batch, Mode mode,
                      const std::vector<FilmParams>* film_override = nullptr);

/// Row-wise softmax of [.., C] logits restricted to unpadded frames.
Tensor softmax_rows(const Tensor& logits);

struct LossResult {
  double loss = 0.0;
  std::size_t frames = 0;
  std::vector<BatchNormCache> bn_batch;  // per layer, for committing running stats
};

/// Mean frame cross-entropy; fills every gradient in model.params (train-mode
/// batch normalization). Running statistics are not touched.
LossResult loss_and_grads(Model& model, const PaddedBatch& batch,
                          const std::vector<FilmParams>* film_override = nullptr);

/// Loss without gradients.
double loss_only(const Model& model, const PaddedBatch& batch, Mode mode = Mode::train,
                 const std::vector<FilmParams>* film_override = nullptr);

void commit_running_stats(Model& model, const LossResult& r);

// ---------------------------------------------------------------------------
// Model file
//
//   "DFILMMOD"                8 bytes
//   version                   u32 (= 1)
//   config length, config     u64, UTF-8 JSON (config_to_json)
//   parameter count           u64
//   per parameter             u32 name length, name, u32 rank, u64 dims[rank],
//                             f64 values[prod(dims)]
//   state count, states       same record layout; BN running stats named
//                             layer<l>.running_mean / layer<l>.running_var
// All integers and doubles little-endian.

void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace dfilm
