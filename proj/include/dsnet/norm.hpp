#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/parallel.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

enum class NormKind { none, batch, group, layer, instance };
enum class NormMode { train, eval };

inline std::string norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::none: return "none";
    case NormKind::batch: return "batch";
    case NormKind::group: return "group";
    case NormKind::layer: return "layer";
    case NormKind::instance: return "instance";
  }
  return "?";
}

inline NormKind norm_kind_from_name(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "batch") return NormKind::batch;
  if (s == "group") return NormKind::group;
  if (s == "layer") return NormKind::layer;
  if (s == "instance") return NormKind::instance;
  throw ConfigError("unknown normalization kind '" + s + "'");
}

struct NormSpec {
  NormKind kind = NormKind::batch;
  bool affine = true;
  std::int64_t groups = 0;  // group kind only; 0 picks the largest divisor <= 32
  double eps = 1e-5;
  double momentum = 0.1;  // running-statistics update rate for batch kind
};

// Persistent per-channel running statistics for batch normalization.
template <typename T>
struct NormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool initialized = false;
};

// Largest divisor of c not exceeding 32.
inline std::int64_t resolve_groups(std::int64_t c) {
  for (std::int64_t g = std::min<std::int64_t>(c, 32); g >= 1; --g) {
    if (c % g == 0) return g;
  }
  return 1;
}

namespace detail {

// Shared reverse rule for statistics computed over a unit of m elements:
// dx = r * (g - mean(g) - xhat * mean(g * xhat)), with xhat = (x - mu) * r.
//
// Group flavor: one unit per (sample, group), elements contiguous.
template <typename T>
Tensor<T> group_normalize(const Tensor<T>& x, std::int64_t groups, double eps) {
  const Shape& xs = x.shape();
  if (groups < 1 || xs.c % groups != 0) {
    throw ConfigError("group count " + std::to_string(groups) + " does not divide " +
                      std::to_string(xs.c) + " channels");
  }
  const std::int64_t units = xs.n * groups;
  const std::int64_t m = (xs.c / groups) * xs.h * xs.w;
  auto means = std::make_shared<std::vector<T>>(static_cast<std::size_t>(units));
  auto rs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(units));

  Tensor<T> y(xs);
  const T* xp = x.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t u = 0; u < units; ++u) {
    const T* xu = xp + u * m;
    T* yu = yp + u * m;
    T mean = T(0);
    for (std::int64_t i = 0; i < m; ++i) mean += xu[i];
    mean /= static_cast<T>(m);
    T var = T(0);
    for (std::int64_t i = 0; i < m; ++i) {
      const T d = xu[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    const T r = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*means)[static_cast<std::size_t>(u)] = mean;
    (*rs)[static_cast<std::size_t>(u)] = r;
    for (std::int64_t i = 0; i < m; ++i) yu[i] = (xu[i] - mean) * r;
  }

  auto xn = x.node();
  auto xdata = x.storage();
  record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    const T* xv = xdata->data();
    DSNET_PARALLEL_FOR
    for (std::int64_t u = 0; u < units; ++u) {
      const T mean = (*means)[static_cast<std::size_t>(u)];
      const T r = (*rs)[static_cast<std::size_t>(u)];
      const T* xu = xv + u * m;
      const T* gu = gy.data() + u * m;
      T* gxu = gx.data() + u * m;
      T gsum = T(0), gxhat = T(0);
      for (std::int64_t i = 0; i < m; ++i) {
        const T xh = (xu[i] - mean) * r;
        gsum += gu[i];
        gxhat += gu[i] * xh;
      }
      gsum /= static_cast<T>(m);
      gxhat /= static_cast<T>(m);
      for (std::int64_t i = 0; i < m; ++i) {
        const T xh = (xu[i] - mean) * r;
        gxu[i] += r * (gu[i] - gsum - xh * gxhat);
      }
    }
  });
  return y;
}

// Batch flavor, training mode: one unit per channel, elements strided over
// (sample, row, col). Updates running statistics with the biased variance.
template <typename T>
Tensor<T> batch_normalize_train(const Tensor<T>& x, NormState<T>& state, double eps,
                                double momentum) {
  const Shape& xs = x.shape();
  const std::int64_t c = xs.c;
  const std::int64_t hw = xs.h * xs.w;
  const std::int64_t m = xs.n * hw;
  auto means = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  auto rs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  std::vector<T> vars(static_cast<std::size_t>(c));

  Tensor<T> y(xs);
  const T* xp = x.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t ch = 0; ch < c; ++ch) {
    T mean = T(0);
    for (std::int64_t n = 0; n < xs.n; ++n) {
      const T* xu = xp + (n * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) mean += xu[i];
    }
    mean /= static_cast<T>(m);
    T var = T(0);
    for (std::int64_t n = 0; n < xs.n; ++n) {
      const T* xu = xp + (n * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const T d = xu[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<T>(m);
    const T r = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*means)[static_cast<std::size_t>(ch)] = mean;
    (*rs)[static_cast<std::size_t>(ch)] = r;
    vars[static_cast<std::size_t>(ch)] = var;
    for (std::int64_t n = 0; n < xs.n; ++n) {
      const T* xu = xp + (n * c + ch) * hw;
      T* yu = yp + (n * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) yu[i] = (xu[i] - mean) * r;
    }
  }

  if (!state.initialized) {
    state.running_mean.assign(means->begin(), means->end());
    state.running_var.assign(vars.begin(), vars.end());
    state.initialized = true;
  } else {
    if (static_cast<std::int64_t>(state.running_mean.size()) != c) {
      throw ShapeError("batch normalization state holds " +
                       std::to_string(state.running_mean.size()) +
                       " channels, input has " + std::to_string(c));
    }
    const T mom = static_cast<T>(momentum);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      auto i = static_cast<std::size_t>(ch);
      state.running_mean[i] = (T(1) - mom) * state.running_mean[i] + mom * (*means)[i];
      state.running_var[i] = (T(1) - mom) * state.running_var[i] + mom * vars[i];
    }
  }

  auto xn = x.node();
  auto xdata = x.storage();
  record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    const T* xv = xdata->data();
    DSNET_PARALLEL_FOR
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T mean = (*means)[static_cast<std::size_t>(ch)];
      const T r = (*rs)[static_cast<std::size_t>(ch)];
      T gsum = T(0), gxhat = T(0);
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const std::int64_t base = (n * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const T xh = (xv[base + i] - mean) * r;
          gsum += gy[base + i];
          gxhat += gy[base + i] * xh;
        }
      }
      gsum /= static_cast<T>(m);
      gxhat /= static_cast<T>(m);
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const std::int64_t base = (n * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const T xh = (xv[base + i] - mean) * r;
          gx[base + i] += r * (gy[base + i] - gsum - xh * gxhat);
        }
      }
    }
  });
  return y;
}

// Batch flavor, evaluation mode: fixed running statistics act as constants.
template <typename T>
Tensor<T> batch_normalize_eval(const Tensor<T>& x, const NormState<T>& state, double eps) {
  const Shape& xs = x.shape();
  const std::int64_t c = xs.c;
  if (!state.initialized) {
    throw TrainError(
        "evaluation-mode batch normalization before any running statistics were recorded");
  }
  if (static_cast<std::int64_t>(state.running_mean.size()) != c) {
    throw ShapeError("batch normalization state holds " +
                     std::to_string(state.running_mean.size()) + " channels, input has " +
                     std::to_string(c));
  }
  auto rs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  std::vector<T> mu(state.running_mean);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    (*rs)[static_cast<std::size_t>(ch)] =
        T(1) / std::sqrt(state.running_var[static_cast<std::size_t>(ch)] +
                         static_cast<T>(eps));
  }

  Tensor<T> y(xs);
  const std::int64_t hw = xs.h * xs.w;
  const std::int64_t nc = xs.n * c;
  const T* xp = x.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t p = 0; p < nc; ++p) {
    const auto ch = static_cast<std::size_t>(p % c);
    const T mean = mu[ch];
    const T r = (*rs)[ch];
    const T* xu = xp + p * hw;
    T* yu = yp + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) yu[i] = (xu[i] - mean) * r;
  }

  auto xn = x.node();
  record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    DSNET_PARALLEL_FOR
    for (std::int64_t p = 0; p < nc; ++p) {
      const T r = (*rs)[static_cast<std::size_t>(p % c)];
      const T* gu = gy.data() + p * hw;
      T* gxu = gx.data() + p * hw;
      for (std::int64_t i = 0; i < hw; ++i) gxu[i] += gu[i] * r;
    }
  });
  return y;
}

}  // namespace detail

// Statistics-only normalization (no affine transform). Batch kind requires a
// persistent state; evaluation mode additionally requires recorded statistics.
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const NormSpec& spec, NormState<T>* state,
                    NormMode mode) {
  switch (spec.kind) {
    case NormKind::none:
      return x;
    case NormKind::batch: {
      if (state == nullptr) {
        throw ConfigError("batch normalization requires persistent running statistics");
      }
      if (mode == NormMode::train) {
        return detail::batch_normalize_train(x, *state, spec.eps, spec.momentum);
      }
      return detail::batch_normalize_eval(x, *state, spec.eps);
    }
    case NormKind::group: {
      const std::int64_t g = spec.groups > 0 ? spec.groups : resolve_groups(x.shape().c);
      return detail::group_normalize(x, g, spec.eps);
    }
    case NormKind::layer:
      return detail::group_normalize(x, 1, spec.eps);
    case NormKind::instance:
      return detail::group_normalize(x, x.shape().c, spec.eps);
  }
  throw ConfigError("unhandled normalization kind");
}

}  // namespace dsnet
