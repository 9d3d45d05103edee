// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic multi-dialect frame-labelling data, the line-delimited dataset
// file format, and padded mini-batching.
//
// A synthetic "dialect" is a fixed affine distortion of the shared class
// acoustics: frame = A_k * mu_c + s_k + noise. The native dialect uses
// A = I, s = 0.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfilm/tensor.hpp"

namespace dfilm {

struct Utterance {
  std::string id;
  std::string dialect;
  Tensor frames;            // [T, F]
  std::vector<int> labels;  // T entries in [0, C)

  std::size_t length() const noexcept { return labels.size(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dataset {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<Utterance> utterances;

  /// Throws ConfigError/NumericError on inconsistent records.
  void validate() const;
  std::size_t total_frames() const noexcept;
  /// Dialect names in order of first appearance.
  std::vector<std::string> dialects() const;
  Dataset filter_dialect(const std::string& dialect) const;
  Dataset exclude_dialects(const std::vector<std::string>& dialects) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DialectCount {
  std::string dialect;
  std::size_t utterances = 0;
  std::size_t frames = 0;
};

struct DatasetManifest {
  std::vector<DialectCount> dialects;
  std::size_t total_utterances = 0;
  std::size_t total_frames = 0;

  static DatasetManifest of(const Dataset& d);
  /// True when the counts agree with the records of `d`.
  bool matches(const Dataset& d) const;
};

// ---------------------------------------------------------------------------
// Synthetic generation

struct DialectSpec {
  std::string name;
  Tensor transform;  // [F, F], applied as A * mu
  Tensor shift;      // [F]
  double noise_scale = 0.0;
  /// Std of a per-utterance offset added to every frame (speaker/channel
  /// variation that is unrelated to the dialect).
  double utterance_offset_scale = 0.0;
  std::size_t train_utterances = 0;
  std::size_t dev_utterances = 0;
  std::size_t test_utterances = 0;
  bool held_out = false;  // never appears in train/dev
};

struct SynthSpec {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::size_t min_length = 1;
  std::size_t max_length = 1;
  std::string native;
  Tensor class_means;  // [C, F]
  Tensor transitions;  // [C, C], rows sum to 1
  std::vector<DialectSpec> dialects;

  /// Throws ConfigError for an invalid spec (degenerate transitions,
  /// ill-conditioned transforms, shape errors).
  void validate() const;
  std::vector<std::string> train_dialects() const;
  std::vector<std::string> held_out_dialects() const;
};

/// High-level knobs from which a full SynthSpec is derived.
struct SynthOptions {
  std::size_t feature_dim = 8;
  std::size_t num_classes = 6;
  std::string native = "native";
  std::vector<std::string> nonnative = {"chi", "ger", "esp", "frn", "ita", "por"};
  std::vector<std::string> held_out = {"kor"};
  std::size_t native_train = 400;
  std::size_t nonnative_train = 100;
  std::size_t dev_per_dialect = 20;
  std::size_t test_per_dialect = 40;
  std::size_t min_length = 20;
  std::size_t max_length = 40;
  double class_spread = 1.0;
  double rotation_angle = 0.9;  // max Givens angle per plane, radians
  double scale_jitter = 0.3;    // per-axis scale in [1 - j, 1 + j]
  double shift_scale = 0.8;     // per-axis mean shift std
  double noise_scale = 1.0;
  double utterance_offset_scale = 0.8;
  double self_transition = 0.6;
  std::uint64_t structure_seed = 7;

  friend bool operator==(const SynthOptions&, const SynthOptions&) = default;
};

SynthSpec make_synth_spec(const SynthOptions& options);

struct DatasetBundle {
  Dataset train;
  Dataset dev;
  Dataset test;
  std::string native;
  std::vector<std::string> train_dialects;
  std::vector<std::string> held_out;
};

/// Deterministic in (spec, seed).
DatasetBundle synth_generate(const SynthSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files
//
// Dataset file: one JSON object per line. Line 1 is the header
//   {"format":"dfilm-dataset","version":1,"feature_dim":F,"num_classes":C,"utterances":N}
// followed by N records
//   {"id":"...","dialect":"...","labels":[...],"frames":[[f_0..f_{F-1}],...]}
// Doubles are written in shortest round-trip form.

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::string manifest_json(const DatasetManifest& m);

/// Writes train.jsonl, dev.jsonl, test.jsonl and manifest.json into `dir`.
void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Batching

struct PaddedBatch {
  Tensor frames;  // [B, T_max, F], zero on padding
  Tensor mask;    // [B, T_max], 1 real / 0 padding
  std::vector<std::vector<int>> labels;  // padded with -1
  std::vector<std::string> dialects;
  std::vector<std::size_t> indices;  // positions in the source dataset
  std::vector<std::size_t> lengths;

  std::size_t size() const noexcept { return lengths.size(); }
  std::size_t max_length() const noexcept { return frames.empty() ? 0 : frames.dim(1); }
  std::size_t total_frames() const noexcept;
};

PaddedBatch make_batch(const Dataset& d, const std::vector<std::size_t>& indices);

/// Splits [0, n) into batches, optionally after a seeded shuffle. The last
/// batch may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, bool shuffle);

class BatchIterator {
 public:
  BatchIterator(const Dataset& d, std::size_t batch_size, std::uint64_t seed, bool shuffle);
  bool next(PaddedBatch& out);
  std::size_t num_batches() const noexcept { return order_.size(); }

 private:
  const Dataset& data_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t pos_ = 0;
};

}  // namespace dfilm
