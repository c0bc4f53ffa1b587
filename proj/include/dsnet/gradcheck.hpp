#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

// Central finite difference of a scalar-valued function with respect to one
// tensor's elements: (f(p + h) - f(p - h)) / (2 h), evaluated element by
// element with the perturbed value restored afterwards.
template <typename T>
std::vector<T> finite_diff_gradient(const std::function<T()>& f, Tensor<T>& param, T h) {
  std::vector<T> grad(static_cast<std::size_t>(param.numel()));
  T* p = param.data();
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    const T saved = p[i];
    p[i] = saved + h;
    const T up = f();
    p[i] = saved - h;
    const T down = f();
    p[i] = saved;
    grad[static_cast<std::size_t>(i)] = (up - down) / (T(2) * h);
  }
  return grad;
}

// Largest elementwise |a - b| / max(1, |a|, |b|) between two gradients.
template <typename T>
T max_relative_error(const std::vector<T>& a, const std::vector<T>& b) {
  T worst = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T denom = std::max(T(1), std::max(std::abs(a[i]), std::abs(b[i])));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace dsnet
