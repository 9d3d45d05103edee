// SPDX-License-Identifier: Apache-2.0
#pragma once

// Generators that produce per-layer FiLM vectors from external dialect
// identity, from an utterance summary of the previous layer, or from both.
//
// Weights live in a ParamStore under fixed names:
//
//   external (all layers at once)   gen.ext.{w_d,b_d,w_c,b_c,w_gamma,b_gamma,w_beta,b_beta}
//   internal, layer l (1-based)     gen.l<l>.{w_s,b_s,w_c,b_c,w_gamma,b_gamma,w_beta,b_beta}
//   combined, layer l               gen.l<l>.{w_d,b_d,w_s,b_s,w_c,b_c,w_gamma,...}
//
// Matrices are stored [in, out] and applied to row vectors: a = x W + b.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfilm/layers.hpp"
#include "dfilm/param_store.hpp"
#include "dfilm/rng.hpp"

namespace dfilm {

enum class CondSource { none, external, internal, both };

/// Ordered dialect names with an optional reserved UNKNOWN entry (always last).
class DialectVocabulary {
 public:
  static constexpr std::string_view kUnknown = "unknown";

  DialectVocabulary() = default;
  DialectVocabulary(std::vector<std::string> names, bool with_unknown);

  /// Number of entries including UNKNOWN.
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  bool has_unknown() const noexcept { return has_unknown_; }
  std::size_t unknown_index() const;
  /// Names without the UNKNOWN entry.
  std::vector<std::string> known_names() const;

  std::optional<std::size_t> index(std::string_view name) const;
  /// Throws ConfigError for names outside the vocabulary.
  std::size_t require_index(std::string_view name) const;

  Tensor one_hot(std::size_t index) const;
  Tensor one_hot(std::string_view name) const { return one_hot(require_index(name)); }

  friend bool operator==(const DialectVocabulary&, const DialectVocabulary&) = default;

 private:
  std::vector<std::string> names_;
  bool has_unknown_ = false;
};

/// Hidden widths of the generators. `hidden` is the single representation
/// of the external-only and internal-only families, `branch` the width of
/// each of the two representations in the combined family, `combiner` the
/// final conditioning representation a_c.
struct GeneratorWidths {
  std::size_t hidden = 64;
  std::size_t branch = 32;
  std::size_t combiner = 64;

  friend bool operator==(const GeneratorWidths&, const GeneratorWidths&) = default;
};

struct ConditioningLayout {
  CondSource source = CondSource::none;
  CondPosition position = CondPosition::none;
  std::size_t num_layers = 0;
  std::size_t hidden = 0;  // LSTM units per layer
  /// Width of h^{l-1} feeding the summary of layer l, for l = 1..L.
  std::vector<std::size_t> summary_widths;
  std::size_t dialects = 0;
  GeneratorWidths widths;

  std::size_t film_width() const { return dfilm::film_width(position, hidden); }
  void validate() const;
};

/// Creates every generator entry for `layout`. Hidden weights are
/// uniform(+-0.05), biases zero; output heads start at W = 0 with
/// b_beta = 0 and b_gamma = 1 (internal/combined) or atanh(0.75)
/// (external, whose tanh head cannot reach 1).
void init_conditioning(ParamStore& params, const ConditioningLayout& layout, Rng& rng);

/// Trainable scalars added by the generators of `layout`.
std::size_t conditioning_param_count(const ConditioningLayout& layout);

std::string layer_prefix(std::size_t layer);

/// Throws ConfigError unless `d` is a valid one-hot vector of `size` entries.
void require_one_hot(const Tensor& d, std::size_t size);

// ---------------------------------------------------------------------------
// Utterance summary: a_s = mean_t tanh(h_t W_s + b_s) over unpadded frames.

struct SummaryCache {
  Tensor inputs;
  Tensor activations;  // tanh(h W_s + b_s), [T, S]
  FrameMask mask;
  std::size_t frames = 0;
};

Tensor summarize_utterance(const Tensor& h, std::span<const double> mask,
                           const Tensor& w_s, const Tensor& b_s,
                           SummaryCache* cache = nullptr);

/// Returns d/dh; accumulates into dw_s and db_s.
Tensor summarize_utterance_backward(const SummaryCache& cache, const Tensor& w_s,
                                    const Tensor& da_s, Tensor& dw_s, Tensor& db_s);

// ---------------------------------------------------------------------------
// External family: identity only, all layers in one shot, tanh heads.

struct ExternalCache {
  Tensor d;
  Tensor a_d;
  Tensor a_c;
  Tensor gamma_all;  // [L * width], post-tanh
  Tensor beta_all;
};

FilmParams generate_external(const Tensor& d, const ParamStore& params,
                             const ConditioningLayout& layout,
                             ExternalCache* cache = nullptr);

/// Accumulates generator gradients from per-layer dgamma/dbeta.
void generate_external_backward(const ExternalCache& cache,
                                std::span<const Tensor> dgamma,
                                std::span<const Tensor> dbeta, ParamStore& params,
                                const ConditioningLayout& layout);

// ---------------------------------------------------------------------------
// Per-layer families: internal (summary only) and combined (identity and
// summary). Linear heads, unbounded output.

struct FilmLayer {
  Tensor gamma;
  Tensor beta;
};

struct LayerGenCache {
  Tensor d;    // combined only
  Tensor a_d;  // combined only
  Tensor a_s;
  Tensor a_c;
};

FilmLayer generate_internal(const Tensor& a_s, const ParamStore& params,
                            const ConditioningLayout& layout, std::size_t layer,
                            LayerGenCache* cache = nullptr);

FilmLayer generate_combined(const Tensor& d, const Tensor& a_s, const ParamStore& params,
                            const ConditioningLayout& layout, std::size_t layer,
                            LayerGenCache* cache = nullptr);

/// Backward of generate_internal / generate_combined for layer `layer`.
/// Returns d/d(a_s); accumulates weight gradients into `params`.
Tensor generate_layer_backward(const LayerGenCache& cache, const Tensor& dgamma,
                               const Tensor& dbeta, ParamStore& params,
                               const ConditioningLayout& layout, std::size_t layer);

}  // namespace dfilm
