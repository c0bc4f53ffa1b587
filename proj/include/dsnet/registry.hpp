#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/norm.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

// Ordered collection of named learnable tensors. Entries alias the owning
// module's storage, so optimizer updates are visible everywhere. Registration
// order is the canonical serialization order.
template <typename T>
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  void add(const std::string& name, const Tensor<T>& t) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter name '" + name + "'");
    }
    index_[name] = entries_.size();
    entries_.push_back({name, t});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ConfigError("unknown parameter '" + name + "'");
    }
    return entries_[it->second].tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t total_elements() const {
    std::int64_t total = 0;
    for (const auto& e : entries_) total += e.tensor.numel();
    return total;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Named view of one persistent running-statistics buffer, in a stable order,
// for serialization alongside the parameters.
template <typename T>
struct NormStateRef {
  std::string name;
  NormState<T>* state = nullptr;
  std::int64_t channels = 0;
};

}  // namespace dsnet
