#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/network.hpp"

namespace dsnet {

struct ResourceReport {
  std::int64_t conv_params = 0;
  std::int64_t norm_affine_params = 0;
  std::int64_t classifier_params = 0;
  std::int64_t shortcut_params = 0;
  std::int64_t macs = 0;             // conv + classifier multiply-accumulates
  std::int64_t elementwise_ops = 0;  // shortcut normalize / scale / add elements
  std::int64_t activation_bytes = 0;

  std::int64_t total_params() const {
    return conv_params + norm_affine_params + classifier_params + shortcut_params;
  }
};

namespace detail {

inline std::int64_t pooled_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                  std::int64_t pad) {
  const std::int64_t out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1) {
    throw ConfigError("input extent " + std::to_string(in) +
                      " too small for the configured network");
  }
  return out;
}

}  // namespace detail

// Closed-form parameter accounting; must match the built registry exactly.
inline ResourceReport count_parameters(const NetworkConfig& cfg) {
  validate_config(cfg);
  ResourceReport r;
  const std::int64_t stem_k = cfg.stem == StemKind::cifar ? 3 : 7;
  const std::int64_t c1 = cfg.stages[0].c_mid;
  r.conv_params += 3 * stem_k * stem_k * c1;
  r.norm_affine_params += 2 * c1;

  std::int64_t in_c = c1;
  for (const auto& plan : cfg.stages) {
    const std::int64_t mid = plan.c_mid;
    const std::int64_t out = 4 * mid;
    for (std::int64_t l = 0; l < plan.blocks; ++l) {
      const std::int64_t block_in = l == 0 ? in_c : out;
      r.conv_params += block_in * mid + 9 * mid * mid + mid * out;
      r.norm_affine_params += 2 * (mid + mid + out);
      if (l == 0) {
        r.conv_params += block_in * out;
        r.norm_affine_params += 2 * out;
      }
    }
    const std::int64_t pairs = plan.blocks * (plan.blocks - 1) / 2;
    if (variant_has_ds(cfg.variant)) {
      r.shortcut_params += out * pairs;
      if (variant_has_inner_ds(cfg.variant)) r.shortcut_params += mid * pairs;
    }
    in_c = out;
  }
  r.classifier_params = in_c * cfg.classes + cfg.classes;
  return r;
}

// Multiply-accumulates of one forward pass plus the elementwise cost of the
// shortcut machinery, at the given input shape.
inline ResourceReport count_flops(const NetworkConfig& cfg, std::int64_t batch,
                                  std::int64_t height, std::int64_t width) {
  validate_config(cfg);
  if (batch < 1 || height < 1 || width < 1) {
    throw ConfigError("input shape must be positive");
  }
  ResourceReport r;
  std::int64_t h = height, w = width;
  const std::int64_t c1 = cfg.stages[0].c_mid;
  if (cfg.stem == StemKind::imagenet) {
    h = detail::pooled_extent(h, 7, 2, 3);
    w = detail::pooled_extent(w, 7, 2, 3);
    r.macs += c1 * 3 * 49 * h * w;
    h = detail::pooled_extent(h, 3, 2, 1);
    w = detail::pooled_extent(w, 3, 2, 1);
  } else {
    h = detail::pooled_extent(h, 3, 1, 1);
    w = detail::pooled_extent(w, 3, 1, 1);
    r.macs += c1 * 3 * 9 * h * w;
  }

  std::int64_t in_c = c1;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& plan = cfg.stages[s];
    const std::int64_t mid = plan.c_mid;
    const std::int64_t out = 4 * mid;
    const std::int64_t entry_stride = s > 0 ? 2 : 1;
    for (std::int64_t l = 0; l < plan.blocks; ++l) {
      const std::int64_t block_in = l == 0 ? in_c : out;
      const std::int64_t stride = l == 0 ? entry_stride : 1;
      const std::int64_t ho = detail::pooled_extent(h, 1, stride, 0);
      const std::int64_t wo = detail::pooled_extent(w, 1, stride, 0);
      r.macs += mid * block_in * ho * wo;
      r.macs += mid * mid * 9 * detail::pooled_extent(ho, 3, 1, 1) *
                detail::pooled_extent(wo, 3, 1, 1);
      r.macs += out * mid * ho * wo;
      if (l == 0) {
        r.macs += out * block_in * ho * wo;
        h = ho;
        w = wo;
      }
      const std::int64_t y_elems = out * h * w;
      if (cfg.variant == Variant::resnet || l == 0) {
        r.elementwise_ops += y_elems;  // single shortcut addition
      } else if (cfg.variant == Variant::resnet_dense) {
        r.elementwise_ops += l * y_elems;  // unweighted dense additions
      } else {
        r.elementwise_ops += 2 * l * y_elems;  // weighted terms: scale + add
        if (variant_has_inner_ds(cfg.variant)) {
          r.elementwise_ops += 2 * l * mid * h * w;
        }
      }
    }
    if (variant_has_ds(cfg.variant) && plan.blocks > 1) {
      // Shared normalization: one pass per consumed source.
      r.elementwise_ops += (plan.blocks - 1) * out * h * w;
      if (variant_has_inner_ds(cfg.variant)) {
        r.elementwise_ops += (plan.blocks - 1) * mid * h * w;
      }
    }
    in_c = out;
  }
  r.macs += in_c * cfg.classes;
  r.macs *= batch;
  r.elementwise_ops *= batch;
  return r;
}

// Peak live-activation estimate under a simple liveness rule: dense variants
// hold every aggregation output of the current stage (DS2Net additionally the
// 3x3 inputs) until the stage ends; ResNet holds only the current block's
// tensors. An ordering tool, not an allocator model.
inline std::int64_t estimate_activation_memory(const NetworkConfig& cfg, std::int64_t batch,
                                               std::int64_t bytes_per_element) {
  validate_config(cfg);
  if (batch < 1 || bytes_per_element < 1) {
    throw ConfigError("batch and element size must be positive");
  }
  const std::int64_t input_hw = cfg.stem == StemKind::cifar ? 32 : 224;
  std::int64_t h = input_hw, w = input_hw;
  const std::int64_t c1 = cfg.stages[0].c_mid;
  std::int64_t peak = 3 * h * w;
  if (cfg.stem == StemKind::imagenet) {
    h = detail::pooled_extent(h, 7, 2, 3);
    w = detail::pooled_extent(w, 7, 2, 3);
    peak = std::max(peak, 3 * input_hw * input_hw + c1 * h * w);
    h = detail::pooled_extent(h, 3, 2, 1);
    w = detail::pooled_extent(w, 3, 2, 1);
  } else {
    peak = std::max(peak, 3 * h * w + c1 * h * w);
  }

  std::int64_t in_c = c1;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& plan = cfg.stages[s];
    const std::int64_t mid = plan.c_mid;
    const std::int64_t out = 4 * mid;
    const std::int64_t entry_stride = s > 0 ? 2 : 1;
    const std::int64_t ho = detail::pooled_extent(h, 1, entry_stride, 0);
    const std::int64_t wo = detail::pooled_extent(w, 1, entry_stride, 0);
    for (std::int64_t l = 0; l < plan.blocks; ++l) {
      const std::int64_t block_in_elems =
          l == 0 ? in_c * h * w : out * ho * wo;
      std::int64_t working = block_in_elems + 2 * mid * ho * wo + 2 * out * ho * wo;
      if (l == 0) working += out * ho * wo;  // projection branch
      std::int64_t held = 0;
      if (cfg.variant != Variant::resnet) {
        held += l * out * ho * wo;
        if (variant_has_inner_ds(cfg.variant)) held += l * mid * ho * wo;
      }
      peak = std::max(peak, working + held);
    }
    h = ho;
    w = wo;
    in_c = out;
  }
  return peak * batch * bytes_per_element;
}

}  // namespace dsnet
