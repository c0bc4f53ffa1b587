#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/network.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

struct EquivalenceReport {
  std::string case_name;
  double max_abs_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline EquivalenceReport make_report(std::string name, double diff, double tol) {
  return {std::move(name), diff, tol, diff <= tol};
}

// Channel-wise concatenation of same-(n,h,w) tensors, no graph linkage.
template <typename T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("channel_concat: no inputs");
  const Shape& first = parts[0].shape();
  std::int64_t total_c = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("channel_concat: mismatched shapes " + first.str() + " vs " +
                       s.str());
    }
    total_c += s.c;
  }
  Tensor<T> out(Shape{first.n, total_c, first.h, first.w});
  const std::int64_t hw = first.h * first.w;
  for (std::int64_t n = 0; n < first.n; ++n) {
    std::int64_t off = 0;
    for (const auto& p : parts) {
      const std::int64_t pc = p.shape().c;
      std::copy_n(p.data() + n * pc * hw, pc * hw,
                  out.data() + (n * total_c + off) * hw);
      off += pc;
    }
  }
  return out;
}

// Input-channel slice [begin, begin+count) of a kernel (c_out, c_in, k, k).
template <typename T>
Tensor<T> kernel_channel_slice(const Tensor<T>& h, std::int64_t begin, std::int64_t count) {
  const Shape& s = h.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("kernel_channel_slice: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(s.c) +
                     " input channels");
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::int64_t kk = s.h * s.w;
  for (std::int64_t co = 0; co < s.n; ++co) {
    std::copy_n(h.data() + (co * s.c + begin) * kk, count * kk,
                out.data() + co * count * kk);
  }
  return out;
}

template <typename T>
double max_abs_difference(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_difference: " + a.shape().str() + " vs " + b.shape().str());
  }
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i] - b.data()[i])));
  }
  return worst;
}

// Dense concatenation before convolution vs dense summation after convolution:
// H * (X_0 / ... / X_m) against sum_i H^i * X_i with H^i the input-channel
// slices of H in source order.
template <typename T>
EquivalenceReport verify_concat_sum_equivalence(const std::vector<Tensor<T>>& sources,
                                                const Tensor<T>& h, std::int64_t stride,
                                                std::int64_t pad, double tol = 1e-12) {
  std::int64_t total_c = 0;
  for (const auto& s : sources) total_c += s.shape().c;
  if (total_c != h.shape().c) {
    throw ShapeError("concat-sum equivalence: kernel expects " +
                     std::to_string(h.shape().c) + " input channels, sources provide " +
                     std::to_string(total_c));
  }
  NoGradGuard guard;
  Tensor<T> lhs = conv2d(channel_concat(sources), h, stride, pad);
  Tensor<T> rhs;
  std::int64_t off = 0;
  for (const auto& s : sources) {
    Tensor<T> term =
        conv2d(s, kernel_channel_slice(h, off, s.shape().c), stride, pad);
    rhs = rhs.defined() ? add(rhs, term) : term;
    off += s.shape().c;
  }
  return make_report("concat-before-conv vs slice-sum-after-conv",
                     max_abs_difference(lhs, rhs), tol);
}

// Shared-weight form: H * (sum_i X_i) against sum_i (H * X_i).
template <typename T>
EquivalenceReport verify_shared_weight_equivalence(const std::vector<Tensor<T>>& sources,
                                                   const Tensor<T>& h, std::int64_t stride,
                                                   std::int64_t pad, double tol = 1e-12) {
  if (sources.empty()) throw ShapeError("shared-weight equivalence: no sources");
  NoGradGuard guard;
  Tensor<T> summed = sources[0];
  for (std::size_t i = 1; i < sources.size(); ++i) summed = add(summed, sources[i]);
  Tensor<T> lhs = conv2d(summed, h, stride, pad);
  Tensor<T> rhs;
  for (const auto& s : sources) {
    Tensor<T> term = conv2d(s, h, stride, pad);
    rhs = rhs.defined() ? add(rhs, term) : term;
  }
  return make_report("conv-of-sum vs sum-of-convs", max_abs_difference(lhs, rhs), tol);
}

// Exact integer coefficients of X_0..X_l in the unrolled recursion
// Y_l = Y_{l-1} + ... + Y_0 + X_l with Y_0 = X_0.
inline std::vector<std::int64_t> expand_dense_identity_coefficients(std::int64_t l) {
  if (l < 0) throw ConfigError("coefficient expansion needs l >= 0");
  std::vector<std::vector<std::int64_t>> rows;
  for (std::int64_t j = 0; j <= l; ++j) {
    std::vector<std::int64_t> row(static_cast<std::size_t>(l) + 1, 0);
    row[static_cast<std::size_t>(j)] = 1;
    for (const auto& prev : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) row[i] += prev[i];
    }
    rows.push_back(std::move(row));
  }
  return rows.back();
}

// Backward vs central finite differences over sampled coordinates of every
// parameter. The report carries the worst relative error seen.
template <typename T>
EquivalenceReport gradient_check(Network<T>& net, std::int64_t coords_per_param, double h,
                                 double tol, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  const std::int64_t spatial = net.cfg.stem == StemKind::cifar ? 32 : 224;
  Tensor<T> input(Shape{2, 3, spatial, spatial});
  fill_randn(input, rng, 1.0);
  std::vector<std::int64_t> labels(2);
  std::uniform_int_distribution<std::int64_t> label_dist(0, net.cfg.classes - 1);
  for (auto& lab : labels) lab = label_dist(rng);

  auto loss_value = [&]() -> T {
    NoGradGuard guard;
    return softmax_cross_entropy(net.forward(input, NormMode::train), labels).data()[0];
  };

  net.params.zero_grad();
  backward(softmax_cross_entropy(net.forward(input, NormMode::train), labels));
  std::vector<std::vector<T>> analytic;
  analytic.reserve(net.params.size());
  for (const auto& e : net.params.entries()) analytic.push_back(e.tensor.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < net.params.entries().size(); ++pi) {
    auto& tensor = net.params.entries()[pi].tensor;
    const std::int64_t n = tensor.numel();
    std::vector<std::int64_t> coords;
    if (n <= coords_per_param) {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      std::unordered_set<std::int64_t> seen;
      std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
      while (static_cast<std::int64_t>(seen.size()) < coords_per_param) {
        seen.insert(pick(rng));
      }
      coords.assign(seen.begin(), seen.end());
      std::sort(coords.begin(), coords.end());
    }
    T* p = tensor.data();
    for (std::int64_t c : coords) {
      const T saved = p[c];
      p[c] = saved + static_cast<T>(h);
      const T up = loss_value();
      p[c] = saved - static_cast<T>(h);
      const T down = loss_value();
      p[c] = saved;
      const double fd = static_cast<double>(up - down) / (2.0 * h);
      const double an = static_cast<double>(analytic[pi][static_cast<std::size_t>(c)]);
      const double err =
          std::abs(an - fd) / std::max(1.0, std::max(std::abs(an), std::abs(fd)));
      worst = std::max(worst, err);
    }
  }
  return make_report("gradient check: " + variant_name(net.cfg.variant), worst, tol);
}

}  // namespace dsnet
