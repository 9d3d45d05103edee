// SPDX-License-Identifier: Apache-2.0
#include <nlohmann/json.hpp>
#include <set>

#include "dfilm/model.hpp"

namespace dfilm {

using nlohmann::json;

namespace {

struct VariantInfo {
  Variant variant;
  const char* name;
  const char* description;
  CondSource source;
  CondPosition position;
  bool aware;
};

constexpr VariantInfo kVariants[] = {
    {Variant::M1, "M1", "Dialect-unaware", CondSource::none, CondPosition::none, false},
    {Variant::M2, "M2", "Dialect-specific", CondSource::none, CondPosition::none, false},
    {Variant::M3, "M3", "Dialect-aware", CondSource::none, CondPosition::none, true},
    {Variant::M4, "M4", "Cond. on D-Info", CondSource::external, CondPosition::input, false},
    {Variant::M5, "M5", "Cond. on Utt-Sum", CondSource::internal, CondPosition::input, false},
    {Variant::M6, "M6", "Cond. on Both", CondSource::both, CondPosition::input, false},
    {Variant::M7, "M7", "Cond. on D-Info", CondSource::external, CondPosition::output, false},
    {Variant::M8, "M8", "Cond. on Utt-Sum", CondSource::internal, CondPosition::output, false},
    {Variant::M9, "M9", "Cond. on Both", CondSource::both, CondPosition::output, false},
    {Variant::M10, "M10", "Cond. on Both + Unk-D", CondSource::both, CondPosition::output,
     false},
};

const VariantInfo& info(Variant v) {
  for (const auto& i : kVariants) {
    if (i.variant == v) return i;
  }
  throw ConfigError("unknown variant");
}

}  // namespace

std::string variant_name(Variant v) { return info(v).name; }
std::string variant_description(Variant v) { return info(v).description; }

Variant parse_variant(const std::string& name) {
  for (const auto& i : kVariants) {
    if (name == i.name) return i.variant;
  }
  throw ConfigError("unknown variant '" + name + "' (expected M1..M10)");
}

std::string to_string(CondSource s) {
  switch (s) {
    case CondSource::none: return "none";
    case CondSource::external: return "external";
    case CondSource::internal: return "internal";
    case CondSource::both: return "both";
  }
  return "?";
}

std::string to_string(CondPosition p) {
  switch (p) {
    case CondPosition::none: return "none";
    case CondPosition::input: return "input";
    case CondPosition::output: return "output";
  }
  return "?";
}

CondSource parse_cond_source(const std::string& s) {
  for (auto v : {CondSource::none, CondSource::external, CondSource::internal, CondSource::both}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown conditioning source '" + s + "'");
}

CondPosition parse_cond_position(const std::string& s) {
  for (auto v : {CondPosition::none, CondPosition::input, CondPosition::output}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown conditioning position '" + s + "'");
}

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden == 0 || input_dim == 0 || num_classes == 0) {
    throw ConfigError("model: num_layers, hidden, input_dim and num_classes must be positive");
  }
  if ((cond_source == CondSource::none) != (cond_position == CondPosition::none)) {
    throw ConfigError("model: cond_source is none iff cond_position is none");
  }
  if (!(unknown_prob >= 0.0 && unknown_prob <= 1.0)) {
    throw ConfigError("model: unknown_prob must lie in [0, 1]");
  }
  if (unknown_prob > 0.0 && !vocabulary.has_unknown()) {
    throw ConfigError("model: unknown_prob > 0 requires an unknown dialect in the vocabulary");
  }
  if (uses_dialect() && vocabulary.size() == 0) {
    throw ConfigError("model: dialect-dependent model needs a dialect vocabulary");
  }
  if (!(bn_epsilon > 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0)) {
    throw ConfigError("model: bad batch-norm epsilon/momentum");
  }
  conditioning_layout().validate();
}

bool ModelConfig::uses_dialect() const noexcept {
  return dialect_aware_input || cond_source == CondSource::external ||
         cond_source == CondSource::both;
}

std::size_t ModelConfig::layer_input_width(std::size_t layer) const {
  if (layer == 1) return input_dim + (dialect_aware_input ? vocabulary.size() : 0);
  return hidden;
}

ConditioningLayout ModelConfig::conditioning_layout() const {
  ConditioningLayout l;
  l.source = cond_source;
  l.position = cond_position;
  l.num_layers = num_layers;
  l.hidden = hidden;
  for (std::size_t i = 1; i <= num_layers; ++i) l.summary_widths.push_back(layer_input_width(i));
  l.dialects = vocabulary.size();
  l.widths = generator;
  return l;
}

ModelConfig variant_config(Variant v, const ModelConfig& base,
                           const std::vector<std::string>& dialects, double unknown_prob) {
  const VariantInfo& i = info(v);
  ModelConfig c = base;
  c.cond_source = i.source;
  c.cond_position = i.position;
  c.dialect_aware_input = i.aware;
  const bool unk = v == Variant::M10;
  c.vocabulary = DialectVocabulary(dialects, unk);
  c.unknown_prob = unk ? unknown_prob : 0.0;
  if (unk && !(unknown_prob > 0.0)) {
    throw ConfigError("M10 requires unknown_prob > 0");
  }
  c.validate();
  return c;
}

std::string config_to_json(const ModelConfig& c) {
  json j = {{"num_layers", c.num_layers},
            {"hidden", c.hidden},
            {"input_dim", c.input_dim},
            {"num_classes", c.num_classes},
            {"lookahead_tau", c.lookahead_tau},
            {"cond_source", to_string(c.cond_source)},
            {"cond_position", to_string(c.cond_position)},
            {"dialect_aware_input", c.dialect_aware_input},
            {"dialects", c.vocabulary.known_names()},
            {"unknown_dialect", c.vocabulary.has_unknown()},
            {"unknown_prob", c.unknown_prob},
            {"generator",
             {{"hidden", c.generator.hidden},
              {"branch", c.generator.branch},
              {"combiner", c.generator.combiner}}},
            {"bn_epsilon", c.bn_epsilon},
            {"bn_momentum", c.bn_momentum}};
  return j.dump(2);
}

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(j,
                      {"num_layers", "hidden", "input_dim", "num_classes", "lookahead_tau",
                       "cond_source", "cond_position", "dialect_aware_input", "dialects",
                       "unknown_dialect", "unknown_prob", "generator", "bn_epsilon",
                       "bn_momentum"},
                      "model config");
  ModelConfig c;
  read(j, "num_layers", c.num_layers);
  read(j, "hidden", c.hidden);
  read(j, "input_dim", c.input_dim);
  read(j, "num_classes", c.num_classes);
  read(j, "lookahead_tau", c.lookahead_tau);
  std::string source = "none", position = "none";
  read(j, "cond_source", source);
  read(j, "cond_position", position);
  c.cond_source = parse_cond_source(source);
  c.cond_position = parse_cond_position(position);
  read(j, "dialect_aware_input", c.dialect_aware_input);
  std::vector<std::string> dialects;
  bool unknown = false;
  read(j, "dialects", dialects);
  read(j, "unknown_dialect", unknown);
  c.vocabulary = DialectVocabulary(dialects, unknown);
  read(j, "unknown_prob", c.unknown_prob);
  if (j.contains("generator")) {
    const json& g = j["generator"];
    reject_unknown_keys(g, {"hidden", "branch", "combiner"}, "generator");
    read(g, "hidden", c.generator.hidden);
    read(g, "branch", c.generator.branch);
    read(g, "combiner", c.generator.combiner);
  }
  read(j, "bn_epsilon", c.bn_epsilon);
  read(j, "bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

}  // namespace dfilm
