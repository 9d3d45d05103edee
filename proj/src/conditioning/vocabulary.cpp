// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include "dfilm/conditioning.hpp"

namespace dfilm {

DialectVocabulary::DialectVocabulary(std::vector<std::string> names, bool with_unknown)
    : names_(std::move(names)), has_unknown_(with_unknown) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("dialect names must be non-empty");
    if (n == kUnknown) {
      throw ConfigError("dialect name '" + n + "' is reserved for the unknown dialect");
    }
    if (!seen.insert(n).second) throw ConfigError("duplicate dialect name '" + n + "'");
  }
  if (has_unknown_) names_.emplace_back(kUnknown);
}

std::size_t DialectVocabulary::unknown_index() const {
  if (!has_unknown_) throw ConfigError("vocabulary has no unknown dialect");
  return names_.size() - 1;
}

std::vector<std::string> DialectVocabulary::known_names() const {
  std::vector<std::string> out = names_;
  if (has_unknown_) out.pop_back();
  return out;
}

std::optional<std::size_t> DialectVocabulary::index(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t DialectVocabulary::require_index(std::string_view name) const {
  if (auto i = index(name)) return *i;
  throw ConfigError("dialect '" + std::string(name) + "' is not in the model vocabulary");
}

Tensor DialectVocabulary::one_hot(std::size_t index) const {
  if (index >= names_.size()) {
    throw ConfigError("dialect index " + std::to_string(index) + " out of range");
  }
  Tensor d({names_.size()});
  d[index] = 1.0;
  return d;
}

void require_one_hot(const Tensor& d, std::size_t size) {
  if (d.shape() != Shape{size}) {
    throw ConfigError("dialect vector must have shape [" + std::to_string(size) + "], got " +
                      shape_to_string(d.shape()));
  }
  std::size_t ones = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] == 1.0) {
      ++ones;
    } else if (d[i] != 0.0) {
      throw ConfigError("dialect vector is not one-hot");
    }
  }
  if (ones != 1) throw ConfigError("dialect vector is not one-hot");
}

}  // namespace dfilm
