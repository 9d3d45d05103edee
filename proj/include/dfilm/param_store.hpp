// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfilm/tensor.hpp"

namespace dfilm {

/// Named trainable tensors with gradients of identical shape.
///
/// Entries keep insertion order, which fixes the iteration order used by the
/// optimizer, the gradient checker and the model file.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  /// Adds a new entry with a zero gradient. Throws ConfigError on duplicates.
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  void zero_grads();

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t num_scalars() const noexcept;

  /// Copies values of entries present in both stores with equal shapes.
  /// Returns the number of entries copied.
  std::size_t copy_matching_values(const ParamStore& other);

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  const Entry& find(const std::string& name) const;
  Entry& find(const std::string& name);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dfilm
