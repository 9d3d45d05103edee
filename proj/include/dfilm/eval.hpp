// SPDX-License-Identifier: Apache-2.0
#pragma once

// Frame error metrics, the M1..M10 comparison suite, FiLM dumps and the
// silhouette cluster score.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfilm/model.hpp"
#include "dfilm/train.hpp"

namespace dfilm {

/// Which dialect label a model is fed for each utterance.
///   true_label       the utterance's own dialect; must be in the vocabulary
///   native_fallback  own dialect if known, the native dialect otherwise
///   unknown          own dialect if known, the unknown entry otherwise
enum class DialectPolicy { true_label, native_fallback, unknown };

std::string to_string(DialectPolicy p);
DialectPolicy parse_policy(const std::string& s);

/// unknown for models with an unknown entry, native_fallback otherwise.
DialectPolicy default_policy(const ModelConfig& config);

/// Label fed to `config` for an utterance of `dialect`. Models that ignore
/// dialects get `dialect` back unchanged.
std::string policy_dialect(const ModelConfig& config, const std::string& dialect,
                           DialectPolicy policy, const std::string& native);

struct DialectScore {
  std::string dialect;
  std::size_t frames = 0;
  std::size_t errors = 0;
  double rate() const noexcept {
    return frames ? static_cast<double>(errors) / static_cast<double>(frames) : 0.0;
  }
};

/// Per-dialect frame errors in order of first appearance.
struct ErrorTable {
  std::vector<DialectScore> dialects;

  void add(const std::string& dialect, std::size_t frames, std::size_t errors);
  const DialectScore* find(const std::string& dialect) const;
  std::size_t frames() const noexcept;
  std::size_t errors() const noexcept;
  /// Frame-weighted over every dialect.
  double overall() const noexcept;
  /// Frame-weighted over dialects not in `excluded`.
  double overall_excluding(const std::vector<std::string>& excluded) const;
};

/// Frames of logits[T, C] whose argmax differs from the label. Ties go to
/// the lowest class index.
std::size_t count_frame_errors(const Tensor& logits, std::span<const int> labels);

/// Infer-mode frame error rate per dialect.
ErrorTable frame_error_rate(const Model& model, const Dataset& data, DialectPolicy policy,
                            const std::string& native, std::size_t batch_size = 64);

// ---------------------------------------------------------------------------
// Comparison suite

struct SuiteConfig {
  ModelConfig base;  // geometry; conditioning fields are set per variant
  TrainConfig train;
  TrainConfig fine_tune;  // lr is scaled by 0.1 on top of this config
  double unknown_prob = 0.1;
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::size_t eval_batch_size = 64;
};

struct ReportRow {
  Variant variant = Variant::M1;
  std::size_t params = 0;
  std::vector<double> per_dialect;  // aligned with EvalReport::dialects
  double overall_seen = 0.0;        // excluding held-out dialects
  double overall_all = 0.0;         // including held-out dialects
  std::size_t seeds = 0;            // seeds that completed
  std::string failure;              // non-empty when a seed diverged
};

struct EvalReport {
  std::vector<std::string> dialects;  // test-set order
  std::vector<std::string> held_out;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;

  const ReportRow* row(Variant v) const;
  double score(Variant v, const std::string& dialect) const;
  std::string to_table() const;
  std::string to_json() const;
};

/// Hooks for observing the suite. `model` sees every trained model once
/// (for M2, one call per dialect with `dialect` set).
struct SuiteHooks {
  std::function<void(Variant, std::uint64_t seed, const std::string& dialect, const Model&)>
      model;
  std::function<void(const std::string&)> log;
};

/// Trains and evaluates the requested variants for every seed and averages
/// the per-dialect error rates over completed seeds. M2 needs M1 from the
/// same seed and is skipped with a failure note when M1 failed.
EvalReport compare_suite(const DatasetBundle& bundle, const SuiteConfig& config,
                         const std::vector<std::uint64_t>& seeds, const SuiteHooks& hooks = {});

// ---------------------------------------------------------------------------
// FiLM dump and cluster score

struct FilmRecord {
  std::string utterance;
  std::string dialect;  // true dialect of the utterance
  std::size_t layer = 0;  // 1-based
  Tensor gamma;
  Tensor beta;

  /// (gamma, beta) concatenated.
  std::vector<double> features() const;
};

/// Infer-mode FiLM vectors, one record per utterance and layer. Throws
/// ConfigError for unconditioned models.
std::vector<FilmRecord> dump_film(const Model& model, const Dataset& data, DialectPolicy policy,
                                  const std::string& native, std::size_t batch_size = 64);

/// Line-delimited records {"utt","dialect","layer","gamma","beta"}.
void save_film_dump(const std::vector<FilmRecord>& records, const std::filesystem::path& path);
std::vector<FilmRecord> load_film_dump(const std::filesystem::path& path);

/// Mean silhouette coefficient with Euclidean distance. A point whose a and b
/// are both zero scores 0. Throws ConfigError with fewer than two labels or a
/// label with a single point.
double silhouette(const std::vector<std::vector<double>>& points,
                  const std::vector<std::string>& labels);

/// Silhouette of the records of `layer`, grouped by dialect.
double cluster_score(const std::vector<FilmRecord>& records, std::size_t layer);

}  // namespace dfilm
