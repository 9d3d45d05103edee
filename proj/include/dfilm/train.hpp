// SPDX-License-Identifier: Apache-2.0
#pragma once

// Adam, unknown-dialect relabeling and the epoch loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dfilm/model.hpp"
#include "dfilm/rng.hpp"

namespace dfilm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Standard Adam with bias correction. Moment buffers mirror the ParamStore
/// entries by position, so the store layout must not change between steps.
class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig config);

  /// Applies one update from the gradients currently in `params`. Throws
  /// NumericError on a non-finite gradient (parameters are left untouched).
  void step(ParamStore& params);

  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  std::uint64_t steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Single stateless update of one scalar, exposed for hand-checkable tests.
/// Returns the new (theta, m, v) after step t >= 1.
struct AdamScalar {
  double theta, m, v;
};
AdamScalar adam_update(double theta, double grad, double m, double v, std::uint64_t t,
                       const AdamConfig& config);

/// Each entry independently becomes the vocabulary's unknown name with
/// probability p. The input is not modified.
std::vector<std::string> relabel_unknown(const std::vector<std::string>& dialects, double p,
                                         Rng& rng);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_epochs = 12;
  std::uint64_t seed = 1;
  AdamConfig adam;
  /// Halve the lr when dev frame error fails to improve for `patience`
  /// consecutive epochs, never below adam.lr * min_lr_fraction.
  double lr_decay = 0.5;
  std::size_t patience = 1;
  double min_lr_fraction = 1.0 / 64.0;
  /// Keep the parameters of the best dev epoch at the end.
  bool restore_best = true;
  /// Overrides the model's unknown_prob when set to a value >= 0.
  double unknown_prob = -1.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double dev_error = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_dev_error = 1.0;
  double initial_dev_error = 1.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Shuffled minibatch Adam over `train`, dev frame error after each epoch.
/// Utterances keep their true dialect on the dev set. Throws NumericError when
/// the loss becomes non-finite.
TrainLog train(Model& model, const Dataset& train, const Dataset& dev, const TrainConfig& config,
               const EpochCallback& on_epoch = {});

/// `train` with the learning rate scaled by `lr_scale` (0.1 by default).
TrainLog fine_tune(Model& model, const Dataset& train, const Dataset& dev,
                   const TrainConfig& config, double lr_scale = 0.1,
                   const EpochCallback& on_epoch = {});

std::string train_log_json(const TrainLog& log);

}  // namespace dfilm
