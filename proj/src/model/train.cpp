// SPDX-License-Identifier: Apache-2.0
#include "dfilm/train.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "dfilm/eval.hpp"

namespace dfilm {

Adam::Adam(const ParamStore& params, AdamConfig config) : config_(config) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.value.shape());
    v_.emplace_back(e.value.shape());
  }
}

AdamScalar adam_update(double theta, double grad, double m, double v, std::uint64_t t,
                       const AdamConfig& c) {
  if (t == 0) throw ConfigError("adam: step index starts at 1");
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad * grad;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  theta -= c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
  return {theta, m, v};
}

void Adam::step(ParamStore& params) {
  auto& entries = params.entries();
  if (entries.size() != m_.size()) throw ShapeError("adam: parameter store layout changed");
  for (const auto& e : entries) {
    if (!e.grad.all_finite()) throw NumericError("adam: non-finite gradient for '" + e.name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& theta = entries[k].value;
    const Tensor& g = entries[k].grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    if (theta.shape() != m.shape()) throw ShapeError("adam: parameter shape changed");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      theta[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.epsilon);
    }
  }
}

std::vector<std::string> relabel_unknown(const std::vector<std::string>& dialects, double p,
                                         Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("relabel_unknown: p must lie in [0, 1]");
  std::vector<std::string> out = dialects;
  if (p == 0.0) return out;
  for (auto& d : out) {
    if (rng.bernoulli(p)) d = std::string(DialectVocabulary::kUnknown);
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must lie in (0, 1]");
  if (patience == 0) throw ConfigError("train: patience must be at least 1");
  if (!(min_lr_fraction > 0.0 && min_lr_fraction <= 1.0)) {
    throw ConfigError("train: min_lr_fraction must lie in (0, 1]");
  }
  if (unknown_prob > 1.0) throw ConfigError("train: unknown_prob must lie in [0, 1]");
}

namespace {

void check_compatible(const Model& model, const Dataset& d, const char* what) {
  if (d.utterances.empty()) throw ConfigError(std::string("train: empty ") + what + " set");
  if (d.feature_dim != model.config.input_dim || d.num_classes != model.config.num_classes) {
    throw ConfigError(std::string("train: ") + what + " set has F=" +
                      std::to_string(d.feature_dim) + ", C=" + std::to_string(d.num_classes) +
                      " but the model expects F=" + std::to_string(model.config.input_dim) +
                      ", C=" + std::to_string(model.config.num_classes));
  }
}

struct Snapshot {
  ParamStore params;
  std::vector<BatchNormState> bn;
};

}  // namespace

TrainLog train(Model& model, const Dataset& train_set, const Dataset& dev,
               const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_compatible(model, train_set, "training");
  check_compatible(model, dev, "dev");
  const double p = config.unknown_prob >= 0.0 ? config.unknown_prob : model.config.unknown_prob;
  if (p > 0.0 && !model.config.vocabulary.has_unknown()) {
    throw ConfigError("train: unknown_prob > 0 needs a model with an unknown dialect entry");
  }

  auto dev_error = [&] {
    return frame_error_rate(model, dev, DialectPolicy::true_label, "").overall();
  };

  TrainLog log;
  log.initial_dev_error = dev_error();
  log.best_dev_error = log.initial_dev_error;
  Snapshot best{model.params, model.bn};

  Adam adam(model.params, config.adam);
  const double min_lr = config.adam.lr * config.min_lr_fraction;
  Rng root(config.seed);
  Rng relabel_rng = root.fork(0x11);
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = batch_indices(train_set.utterances.size(), config.batch_size,
                                     root.fork(epoch).next_u64(), true);
    double loss_sum = 0.0;
    std::size_t frames = 0;
    for (const auto& idx : order) {
      PaddedBatch batch = make_batch(train_set, idx);
      if (p > 0.0) batch.dialects = relabel_unknown(batch.dialects, p, relabel_rng);
      LossResult r;
      try {
        r = loss_and_grads(model, batch);
      } catch (const NumericError& e) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) +
                           " at lr " + std::to_string(adam.lr()) + ": " + e.what());
      }
      adam.step(model.params);
      commit_running_stats(model, r);
      loss_sum += r.loss * static_cast<double>(r.frames);
      frames += r.frames;
    }

    EpochLog e;
    e.epoch = epoch;
    e.lr = adam.lr();
    e.train_loss = loss_sum / static_cast<double>(frames);
    e.dev_error = dev_error();
    if (!std::isfinite(e.train_loss)) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch));
    }
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);

    if (e.dev_error < log.best_dev_error) {
      log.best_dev_error = e.dev_error;
      log.best_epoch = epoch;
      best = {model.params, model.bn};
      stale = 0;
    } else if (++stale >= config.patience) {
      adam.set_lr(std::max(min_lr, adam.lr() * config.lr_decay));
      stale = 0;
    }
  }

  if (config.restore_best && log.best_epoch != (log.epochs.empty() ? 0 : log.epochs.back().epoch)) {
    model.params = std::move(best.params);
    model.bn = std::move(best.bn);
  }
  return log;
}

TrainLog fine_tune(Model& model, const Dataset& train_set, const Dataset& dev,
                   const TrainConfig& config, double lr_scale, const EpochCallback& on_epoch) {
  if (!(lr_scale > 0.0)) throw ConfigError("fine_tune: lr_scale must be positive");
  TrainConfig c = config;
  c.adam.lr *= lr_scale;
  return train(model, train_set, dev, c, on_epoch);
}

std::string train_log_json(const TrainLog& log) {
  nlohmann::json j;
  j["initial_dev_error"] = log.initial_dev_error;
  j["best_epoch"] = log.best_epoch;
  j["best_dev_error"] = log.best_dev_error;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"lr", e.lr},
                           {"train_loss", e.train_loss},
                           {"dev_error", e.dev_error}});
  }
  return j.dump(2);
}

}  // namespace dfilm
