#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/norm.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

// Lazy shared-normalization cache for dense shortcut sources within one stage.
// Each registered source is normalized at most once per forward pass no matter
// how many later blocks consume it; every consumer receives the same tensor.
template <typename T>
class AggregationCache {
 public:
  AggregationCache(const NormSpec& spec, NormMode mode) : spec_(spec), mode_(mode) {}

  void register_source(std::int64_t id, const Tensor<T>& src, NormState<T>* state) {
    if (sources_.count(id)) {
      throw ConfigError("shortcut source " + std::to_string(id) + " registered twice");
    }
    sources_[id] = {src, state};
  }

  bool has_source(std::int64_t id) const { return sources_.count(id) != 0; }

  // Normalized view of a registered source; the first request computes it,
  // later requests return the identical tensor (same storage).
  const Tensor<T>& normalized(std::int64_t id) {
    ++requests_;
    auto cached = cache_.find(id);
    if (cached != cache_.end()) return cached->second;
    auto src = sources_.find(id);
    if (src == sources_.end()) {
      throw ConfigError("shortcut source " + std::to_string(id) + " was not registered");
    }
    ++fills_;
    auto inserted = cache_.emplace(
        id, normalize(src->second.tensor, spec_, src->second.state, mode_));
    return inserted.first->second;
  }

  // Normalization executions so far; stays at the distinct-consumed-source
  // count however many consumers arrive.
  std::uint64_t normalize_runs() const { return fills_; }
  std::uint64_t requests() const { return requests_; }
  std::uint64_t consumed_sources() const { return cache_.size(); }

 private:
  struct Source {
    Tensor<T> tensor;
    NormState<T>* state = nullptr;
  };
  NormSpec spec_;
  NormMode mode_;
  std::map<std::int64_t, Source> sources_;
  std::map<std::int64_t, Tensor<T>> cache_;
  std::uint64_t fills_ = 0;
  std::uint64_t requests_ = 0;
};

// One dense shortcut term: channel-wise learnable weight times the already
// normalized source.
template <typename T>
Tensor<T> ds_apply(const Tensor<T>& source_norm, const Tensor<T>& w) {
  return channelwise_scale(source_norm, w);
}

// Block input aggregate: the block's own path enters bare, every earlier
// source enters weighted and normalized through the shared cache.
template <typename T>
Tensor<T> aggregate_block_input(
    const Tensor<T>& own, AggregationCache<T>& cache,
    const std::vector<std::pair<std::int64_t, Tensor<T>>>& weighted_sources) {
  Tensor<T> acc = own;
  for (const auto& [id, w] : weighted_sources) {
    acc = add(acc, ds_apply(cache.normalized(id), w));
  }
  return acc;
}

// Unweighted, unnormalized dense sum: x_l plus every aggregation output so
// far. With an empty history this is x_l itself.
template <typename T>
Tensor<T> naive_dense_identity_sum(const std::vector<Tensor<T>>& y_history,
                                   const Tensor<T>& x_l) {
  Tensor<T> acc = x_l;
  for (const auto& y : y_history) acc = add(acc, y);
  return acc;
}

}  // namespace dsnet
