// SPDX-License-Identifier: Apache-2.0
#include "dfilm/param_store.hpp"

namespace dfilm {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  Tensor grad(value.shape());
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, std::move(value), std::move(grad)});
  return entries_.back().value;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

const ParamStore::Entry& ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return entries_[it->second];
}

ParamStore::Entry& ParamStore::find(const std::string& name) {
  return const_cast<Entry&>(static_cast<const ParamStore&>(*this).find(name));
}

Tensor& ParamStore::value(const std::string& name) { return find(name).value; }
const Tensor& ParamStore::value(const std::string& name) const { return find(name).value; }
Tensor& ParamStore::grad(const std::string& name) { return find(name).grad; }
const Tensor& ParamStore::grad(const std::string& name) const { return find(name).grad; }

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::size_t ParamStore::num_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParamStore::copy_matching_values(const ParamStore& other) {
  std::size_t copied = 0;
  for (auto& e : entries_) {
    auto it = other.index_.find(e.name);
    if (it == other.index_.end()) continue;
    const Tensor& src = other.entries_[it->second].value;
    if (src.shape() != e.value.shape()) continue;
    e.value = src;
    ++copied;
  }
  return copied;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name) return false;
    if (!(a.entries_[i].value == b.entries_[i].value)) return false;
  }
  return true;
}

}  // namespace dfilm
