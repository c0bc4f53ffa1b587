#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <vector>

#include "dsnet/common.hpp"

namespace dsnet {

namespace detail {

// One executed primitive in the differentiation graph. Nodes are created in
// execution order (monotone `seq`), so reverse-seq order is a valid reverse
// topological order and backward visits each node exactly once.
template <typename T>
struct Node {
  std::uint64_t seq = 0;
  std::int64_t numel = 0;
  bool leaf = false;      // learnable parameter; grad survives backward
  bool consumed = false;  // interior node whose backward rule already ran
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates d(loss)/d(parents) given d(loss)/d(this), then is discarded.
  std::function<void(const std::vector<T>&)> backprop;
  std::vector<T> grad;

  std::vector<T>& grad_buf() {
    if (grad.empty()) grad.assign(static_cast<std::size_t>(numel), T(0));
    return grad;
  }
};

inline std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Scoped gradient-recording switch; eval-mode forward passes run under one.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense 4-D tensor (batch, channel, rows, cols) with optional linkage into the
// differentiation graph. Copies are shallow: storage and graph node are shared.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(const Shape& s) : shape_(s) {
    check_shape_valid(s);
    data_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.numel()), T(0));
  }

  static Tensor zeros(const Shape& s) { return Tensor(s); }

  static Tensor full(const Shape& s, T v) {
    Tensor t(s);
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor ones(const Shape& s) { return full(s, T(1)); }

  static Tensor from(const Shape& s, std::vector<T> values) {
    check_shape_valid(s);
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + s.str());
    }
    Tensor t;
    t.shape_ = s;
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  std::vector<T>& vec() { return *data_; }
  const std::vector<T>& vec() const { return *data_; }
  const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

  std::int64_t index_of(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    if (n < 0 || n >= shape_.n || c < 0 || c >= shape_.c || h < 0 || h >= shape_.h ||
        w < 0 || w >= shape_.w) {
      throw ShapeError("index (" + std::to_string(n) + "," + std::to_string(c) + "," +
                       std::to_string(h) + "," + std::to_string(w) +
                       ") outside tensor shape " + shape_.str());
    }
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return (*data_)[static_cast<std::size_t>(index_of(n, c, h, w))];
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return (*data_)[static_cast<std::size_t>(index_of(n, c, h, w))];
  }

  // --- differentiation graph linkage ---

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  void set_node(std::shared_ptr<detail::Node<T>> n) { node_ = std::move(n); }
  bool has_node() const { return node_ != nullptr; }

  // Marks this tensor as a learnable parameter: gives it a persistent leaf
  // node that accumulates gradients across backward passes.
  void make_leaf() {
    if (node_ && node_->leaf) return;
    auto n = std::make_shared<detail::Node<T>>();
    n->seq = detail::next_node_seq();
    n->numel = numel();
    n->leaf = true;
    node_ = std::move(n);
  }

  bool is_leaf() const { return node_ && node_->leaf; }

  // Gradient of the last backward pass; zeros when the parameter was
  // unreachable from the loss.
  std::vector<T> grad() const {
    if (node_ && !node_->grad.empty()) return node_->grad;
    return std::vector<T>(static_cast<std::size_t>(numel()), T(0));
  }

  // Raw accumulated gradient, or nullptr when none was accumulated.
  const T* grad_ptr() const {
    if (node_ && !node_->grad.empty()) return node_->grad.data();
    return nullptr;
  }

  void zero_grad() {
    if (node_) {
      node_->grad.clear();
      node_->grad.shrink_to_fit();
    }
  }

  // Same storage, no graph linkage.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Deep copy of the storage, no graph linkage.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

 private:
  Shape shape_{};
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Attaches a freshly computed output to the graph when recording is on and at
// least one input participates. `backprop` receives d(loss)/d(out).
template <typename T>
void record(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
            std::function<void(const std::vector<T>&)> backprop) {
  if (!grad_mode_flag()) return;
  bool any = false;
  for (const Tensor<T>* in : inputs) {
    if (in->has_node()) {
      any = true;
      break;
    }
  }
  if (!any) return;
  auto node = std::make_shared<Node<T>>();
  node->seq = next_node_seq();
  node->numel = out.numel();
  for (const Tensor<T>* in : inputs) {
    if (in->has_node()) node->parents.push_back(in->node());
  }
  node->backprop = std::move(backprop);
  out.set_node(std::move(node));
}

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& target, const std::vector<T>& incoming) {
  auto& g = target->grad_buf();
  const std::size_t m = g.size();
  for (std::size_t i = 0; i < m; ++i) g[i] += incoming[i];
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Every parameter reachable from the
// loss accumulates a gradient; the interior of the graph is consumed, so a
// second backward over the same graph is an error.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.has_node()) {
    throw AutogradError("backward: loss has no differentiation-graph linkage");
  }
  if (loss.numel() != 1) {
    throw AutogradError("backward: loss must be scalar, got shape " + loss.shape().str());
  }
  auto root = loss.node();
  if (root->consumed) {
    throw AutogradError("backward: graph already consumed by a previous backward call");
  }

  // Reachable set, then reverse execution order.
  std::vector<detail::Node<T>*> order;
  {
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<detail::Node<T>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (auto& p : n->parents) {
        if (seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node<T>* a, const detail::Node<T>* b) { return a->seq > b->seq; });

  root->grad_buf()[0] = T(1);
  for (auto* n : order) {
    if (n->backprop) {
      n->backprop(n->grad_buf());
      n->backprop = nullptr;
      n->consumed = true;
    }
    if (!n->leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// --- random fills (deterministic given the engine state) ---

template <typename T>
void fill_randn(Tensor<T>& t, std::mt19937_64& rng, double stddev, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

}  // namespace dsnet
