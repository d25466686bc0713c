#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "godp/errors.hpp"
#include "godp/tensor.hpp"

namespace godp {

// Named learnable tensors plus non-learnable buffers (batch-norm running
// statistics). Insertion order is the canonical order for serialization,
// initialization and optimizer state.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool learnable = true;
  };

  // Returns the index of the new entry; names must be unique.
  std::size_t add(std::string name, Tensor<T> value, bool learnable) {
    for (const auto& e : entries_) {
      if (e.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    if (learnable != value.requires_grad()) {
      throw ConfigError("parameter '" + name + "': learnable entries need a gradient slot, buffers must not");
    }
    entries_.push_back({std::move(name), std::move(value), learnable});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor<T>& at(std::size_t i) { return entries_.at(i).value; }
  const Tensor<T>& at(std::size_t i) const { return entries_.at(i).value; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry* find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  Tensor<T>& get(std::string_view name) {
    for (auto& e : entries_) {
      if (e.name == name) return e.value;
    }
    throw ConfigError("no parameter named '" + std::string(name) + "'");
  }

  // Number of learnable scalars.
  std::size_t learnable_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) {
      if (e.learnable) total += e.value.numel();
    }
    return total;
  }

  void zero_grads() {
    for (auto& e : entries_) {
      if (e.learnable) e.value.zero_grad();
    }
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace godp
