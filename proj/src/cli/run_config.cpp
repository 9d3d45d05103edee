// SPDX-License-Identifier: Apache-2.0
#include "dfilm/run_config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace dfilm {

using nlohmann::ordered_json;

TrainConfig RunConfig::default_fine_tune() {
  TrainConfig t;
  t.max_epochs = 4;
  return t;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  fine_tune.validate();
  if (variants.empty()) throw ConfigError("run config: suite.variants is empty");
  if (seeds.empty()) throw ConfigError("run config: suite.seeds is empty");
  if (!(unknown_prob > 0.0 && unknown_prob <= 1.0)) {
    throw ConfigError("run config: suite.unknown_prob must lie in (0, 1]");
  }
  if (eval_batch_size == 0) throw ConfigError("run config: eval_batch_size must be positive");
  make_synth_spec(synth);  // validates the synthetic spec
}

namespace {

ordered_json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},   {"max_epochs", t.max_epochs},
          {"seed", t.seed},               {"lr", t.adam.lr},
          {"beta1", t.adam.beta1},        {"beta2", t.adam.beta2},
          {"epsilon", t.adam.epsilon},    {"lr_decay", t.lr_decay},
          {"patience", t.patience},       {"min_lr_fraction", t.min_lr_fraction},
          {"restore_best", t.restore_best}, {"unknown_prob", t.unknown_prob}};
}

void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const ordered_json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

void read_train(const ordered_json& j, TrainConfig& t, const std::string& where) {
  check_keys(j,
             {"batch_size", "max_epochs", "seed", "lr", "beta1", "beta2", "epsilon", "lr_decay",
              "patience", "min_lr_fraction", "restore_best", "unknown_prob"},
             where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "max_epochs", t.max_epochs, where);
  read(j, "seed", t.seed, where);
  read(j, "lr", t.adam.lr, where);
  read(j, "beta1", t.adam.beta1, where);
  read(j, "beta2", t.adam.beta2, where);
  read(j, "epsilon", t.adam.epsilon, where);
  read(j, "lr_decay", t.lr_decay, where);
  read(j, "patience", t.patience, where);
  read(j, "min_lr_fraction", t.min_lr_fraction, where);
  read(j, "restore_best", t.restore_best, where);
  read(j, "unknown_prob", t.unknown_prob, where);
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  const SynthOptions& s = c.synth;
  ordered_json j;
  j["synth"] = {{"feature_dim", s.feature_dim},
                {"num_classes", s.num_classes},
                {"native", s.native},
                {"nonnative", s.nonnative},
                {"held_out", s.held_out},
                {"native_train", s.native_train},
                {"nonnative_train", s.nonnative_train},
                {"dev_per_dialect", s.dev_per_dialect},
                {"test_per_dialect", s.test_per_dialect},
                {"min_length", s.min_length},
                {"max_length", s.max_length},
                {"class_spread", s.class_spread},
                {"rotation_angle", s.rotation_angle},
                {"scale_jitter", s.scale_jitter},
                {"shift_scale", s.shift_scale},
                {"noise_scale", s.noise_scale},
                {"utterance_offset_scale", s.utterance_offset_scale},
                {"self_transition", s.self_transition},
                {"structure_seed", s.structure_seed}};
  const ModelConfig& m = c.model;
  j["model"] = {{"num_layers", m.num_layers},
                {"hidden", m.hidden},
                {"lookahead_tau", m.lookahead_tau},
                {"bn_epsilon", m.bn_epsilon},
                {"bn_momentum", m.bn_momentum},
                {"generator",
                 {{"hidden", m.generator.hidden},
                  {"branch", m.generator.branch},
                  {"combiner", m.generator.combiner}}}};
  j["train"] = train_json(c.train);
  j["fine_tune"] = train_json(c.fine_tune);
  std::vector<std::string> variants;
  for (auto v : c.variants) variants.push_back(variant_name(v));
  j["suite"] = {{"variants", variants},
                {"seeds", c.seeds},
                {"unknown_prob", c.unknown_prob},
                {"eval_batch_size", c.eval_batch_size}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"synth", "model", "train", "fine_tune", "suite"}, "run config");
  RunConfig c;
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    const std::string w = "synth";
    check_keys(s,
               {"feature_dim", "num_classes", "native", "nonnative", "held_out", "native_train",
                "nonnative_train", "dev_per_dialect", "test_per_dialect", "min_length",
                "max_length", "class_spread", "rotation_angle", "scale_jitter", "shift_scale",
                "noise_scale", "utterance_offset_scale", "self_transition", "structure_seed"},
               w);
    SynthOptions& o = c.synth;
    read(s, "feature_dim", o.feature_dim, w);
    read(s, "num_classes", o.num_classes, w);
    read(s, "native", o.native, w);
    read(s, "nonnative", o.nonnative, w);
    read(s, "held_out", o.held_out, w);
    read(s, "native_train", o.native_train, w);
    read(s, "nonnative_train", o.nonnative_train, w);
    read(s, "dev_per_dialect", o.dev_per_dialect, w);
    read(s, "test_per_dialect", o.test_per_dialect, w);
    read(s, "min_length", o.min_length, w);
    read(s, "max_length", o.max_length, w);
    read(s, "class_spread", o.class_spread, w);
    read(s, "rotation_angle", o.rotation_angle, w);
    read(s, "scale_jitter", o.scale_jitter, w);
    read(s, "shift_scale", o.shift_scale, w);
    read(s, "noise_scale", o.noise_scale, w);
    read(s, "utterance_offset_scale", o.utterance_offset_scale, w);
    read(s, "self_transition", o.self_transition, w);
    read(s, "structure_seed", o.structure_seed, w);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    const std::string w = "model";
    check_keys(m, {"num_layers", "hidden", "lookahead_tau", "bn_epsilon", "bn_momentum", "generator"},
               w);
    read(m, "num_layers", c.model.num_layers, w);
    read(m, "hidden", c.model.hidden, w);
    read(m, "lookahead_tau", c.model.lookahead_tau, w);
    read(m, "bn_epsilon", c.model.bn_epsilon, w);
    read(m, "bn_momentum", c.model.bn_momentum, w);
    if (m.contains("generator")) {
      const auto& g = m["generator"];
      check_keys(g, {"hidden", "branch", "combiner"}, "model.generator");
      read(g, "hidden", c.model.generator.hidden, w);
      read(g, "branch", c.model.generator.branch, w);
      read(g, "combiner", c.model.generator.combiner, w);
    }
  }
  if (j.contains("train")) read_train(j["train"], c.train, "train");
  if (j.contains("fine_tune")) read_train(j["fine_tune"], c.fine_tune, "fine_tune");
  if (j.contains("suite")) {
    const auto& s = j["suite"];
    const std::string w = "suite";
    check_keys(s, {"variants", "seeds", "unknown_prob", "eval_batch_size"}, w);
    if (s.contains("variants")) {
      std::vector<std::string> names;
      read(s, "variants", names, w);
      c.variants.clear();
      for (const auto& n : names) c.variants.push_back(parse_variant(n));
    }
    read(s, "seeds", c.seeds, w);
    read(s, "unknown_prob", c.unknown_prob, w);
    read(s, "eval_batch_size", c.eval_batch_size, w);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return run_config_from_json(text.str());
}

SuiteConfig make_suite_config(const RunConfig& c, std::size_t feature_dim,
                              std::size_t num_classes) {
  SuiteConfig s;
  s.base = c.model;
  s.base.input_dim = feature_dim;
  s.base.num_classes = num_classes;
  s.train = c.train;
  s.fine_tune = c.fine_tune;
  s.unknown_prob = c.unknown_prob;
  s.variants = c.variants;
  s.eval_batch_size = c.eval_batch_size;
  return s;
}

}  // namespace dfilm
