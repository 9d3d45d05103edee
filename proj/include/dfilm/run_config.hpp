// SPDX-License-Identifier: Apache-2.0
#pragma once

// The JSON run configuration shared by every CLI command. Every section and
// key is optional; unknown keys are rejected.
//
//   {"synth":     {SynthOptions fields},
//    "model":     {"num_layers", "hidden", "lookahead_tau", "bn_epsilon",
//                  "bn_momentum", "generator": {"hidden", "branch", "combiner"}},
//    "train":     {"batch_size", "max_epochs", "seed", "lr", "beta1", "beta2",
//                  "epsilon", "lr_decay", "patience", "min_lr_fraction",
//                  "restore_best", "unknown_prob"},
//    "fine_tune": {same keys as "train"},
//    "suite":     {"variants", "seeds", "unknown_prob", "eval_batch_size"}}

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfilm/data.hpp"
#include "dfilm/eval.hpp"
#include "dfilm/model.hpp"
#include "dfilm/train.hpp"

namespace dfilm {

struct RunConfig {
  SynthOptions synth;
  ModelConfig model;  // geometry only; data and variant fill in the rest
  TrainConfig train;
  TrainConfig fine_tune = default_fine_tune();
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double unknown_prob = 0.1;
  std::size_t eval_batch_size = 64;

  static TrainConfig default_fine_tune();
  void validate() const;
};

std::string run_config_to_json(const RunConfig& c);
/// Throws ConfigError on malformed JSON, unknown keys or invalid values.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Suite configuration for data of the given shape.
SuiteConfig make_suite_config(const RunConfig& c, std::size_t feature_dim,
                              std::size_t num_classes);

}  // namespace dfilm
