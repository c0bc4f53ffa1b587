#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/norm.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/registry.hpp"
#include "dsnet/shortcut.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

enum class Variant { resnet, resnet_dense, dsnet_a, dsnet, ds2net };
enum class StemKind { cifar, imagenet };
enum class ShortcutInit { ones, zeros, harmonic };  // W = 1, 0, or 1/(l+1)
enum class ConvInit { he_fanout, zeros };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::resnet: return "ResNet";
    case Variant::resnet_dense: return "ResNet-dense";
    case Variant::dsnet_a: return "DSNet-a";
    case Variant::dsnet: return "DSNet";
    case Variant::ds2net: return "DS2Net";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "ResNet" || s == "resnet") return Variant::resnet;
  if (s == "ResNet-dense" || s == "resnet-dense") return Variant::resnet_dense;
  if (s == "DSNet-a" || s == "dsnet-a") return Variant::dsnet_a;
  if (s == "DSNet" || s == "dsnet") return Variant::dsnet;
  if (s == "DS2Net" || s == "ds2net") return Variant::ds2net;
  throw ConfigError("unknown variant '" + s + "'");
}

inline std::string stem_name(StemKind s) {
  return s == StemKind::cifar ? "cifar" : "imagenet";
}

inline StemKind stem_from_name(const std::string& s) {
  if (s == "cifar") return StemKind::cifar;
  if (s == "imagenet") return StemKind::imagenet;
  throw ConfigError("unknown stem '" + s + "'");
}

inline std::string shortcut_init_name(ShortcutInit w) {
  switch (w) {
    case ShortcutInit::ones: return "ones";
    case ShortcutInit::zeros: return "zeros";
    case ShortcutInit::harmonic: return "harmonic";
  }
  return "?";
}

inline ShortcutInit shortcut_init_from_name(const std::string& s) {
  if (s == "ones") return ShortcutInit::ones;
  if (s == "zeros") return ShortcutInit::zeros;
  if (s == "harmonic") return ShortcutInit::harmonic;
  throw ConfigError("unknown shortcut init '" + s + "'");
}

// Dense-shortcut participation per variant. ResNet-dense sums unweighted
// aggregation outputs; the DS family adds weighted normalized sources; only
// DSNet-a draws from raw conv outputs X_i instead of aggregates Y_i.
inline bool variant_has_ds(Variant v) {
  return v == Variant::dsnet_a || v == Variant::dsnet || v == Variant::ds2net;
}
inline bool variant_sources_are_aggregates(Variant v) { return v != Variant::dsnet_a; }
inline bool variant_has_inner_ds(Variant v) { return v == Variant::ds2net; }

struct StagePlan {
  std::int64_t blocks = 0;
  std::int64_t c_mid = 0;
};

struct BlockConfig {
  std::int64_t c_in = 0;
  std::int64_t c_mid = 0;
  std::int64_t c_out = 0;
  std::int64_t stride = 1;
  bool has_projection = false;
};

struct NetworkConfig {
  Variant variant = Variant::resnet;
  StemKind stem = StemKind::cifar;
  std::int64_t classes = 10;
  std::int64_t depth = 0;  // preset depth; 0 for hand-built stage plans
  double width = 1.0;
  std::vector<StagePlan> stages;
  NormSpec shortcut_norm{NormKind::batch, false, 0, 1e-5, 0.1};
  ShortcutInit w_init = ShortcutInit::ones;
  ConvInit conv_init = ConvInit::he_fanout;
  std::uint64_t seed = 1;
};

inline const std::map<std::int64_t, std::array<std::int64_t, 4>>& depth_presets() {
  static const std::map<std::int64_t, std::array<std::int64_t, 4>> presets = {
      {26, {2, 2, 2, 2}},  {38, {3, 3, 3, 3}},   {50, {3, 4, 6, 3}},
      {77, {3, 4, 15, 3}}, {101, {3, 4, 23, 3}},
  };
  return presets;
}

inline void validate_config(const NetworkConfig& cfg) {
  if (cfg.stages.empty()) {
    throw ConfigError("network needs at least one stage");
  }
  for (const auto& st : cfg.stages) {
    if (st.blocks < 1 || st.c_mid < 1) {
      throw ConfigError("every stage needs blocks >= 1 and width >= 1");
    }
  }
  if (cfg.classes < 2) {
    throw ConfigError("classifier needs at least 2 classes");
  }
  if (cfg.shortcut_norm.affine) {
    throw ConfigError("shortcut normalization is affine-free");
  }
}

inline NetworkConfig preset_config(Variant variant, std::int64_t depth, double width,
                                   StemKind stem, std::int64_t classes) {
  auto preset = depth_presets().find(depth);
  if (preset == depth_presets().end()) {
    throw ConfigError("depth " + std::to_string(depth) +
                      " is not a preset (26, 38, 50, 77, 101)");
  }
  const bool width_ok =
      std::abs(width - 0.25) < 1e-9 || std::abs(width - 0.5) < 1e-9 ||
      std::abs(width - 1.0) < 1e-9;
  if (!width_ok) {
    throw ConfigError("width multiplier must be 0.25, 0.5, or 1.0");
  }
  static constexpr std::array<std::int64_t, 4> base_mid = {64, 128, 256, 512};
  NetworkConfig cfg;
  cfg.variant = variant;
  cfg.stem = stem;
  cfg.classes = classes;
  cfg.depth = depth;
  cfg.width = width;
  for (int s = 0; s < 4; ++s) {
    const auto mid = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(base_mid[s] * width)));
    cfg.stages.push_back({preset->second[s], mid});
  }
  validate_config(cfg);
  return cfg;
}

inline NetworkConfig custom_config(Variant variant, std::vector<StagePlan> stages,
                                   StemKind stem, std::int64_t classes) {
  NetworkConfig cfg;
  cfg.variant = variant;
  cfg.stem = stem;
  cfg.classes = classes;
  cfg.stages = std::move(stages);
  validate_config(cfg);
  return cfg;
}

// Block-internal normalization: batch kind with learned scale and shift.
template <typename T>
struct NormLayer {
  Tensor<T> gamma, beta;
  NormState<T> state;
  NormSpec spec{NormKind::batch, true, 0, 1e-5, 0.1};

  void init(std::int64_t c) {
    gamma = Tensor<T>::ones(Shape{1, c, 1, 1});
    beta = Tensor<T>::zeros(Shape{1, c, 1, 1});
    gamma.make_leaf();
    beta.make_leaf();
  }

  Tensor<T> forward(const Tensor<T>& x, NormMode mode) {
    auto y = normalize(x, spec, &state, mode);
    return channelwise_shift(channelwise_scale(y, gamma), beta);
  }
};

template <typename T>
struct BottleneckBlock {
  std::int64_t index = 0;  // position l within the stage
  BlockConfig cfg;
  Tensor<T> conv1, conv2, conv3;
  NormLayer<T> bn1, bn2, bn3;
  Tensor<T> proj_w;
  NormLayer<T> proj_bn;
  std::vector<Tensor<T>> ds_w;   // outer weights, one per source i < l
  std::vector<Tensor<T>> ds2_w;  // inner weights, one per source i < l
};

struct ForwardStats {
  std::uint64_t shortcut_norm_runs = 0;
  std::uint64_t shortcut_norm_requests = 0;
  std::uint64_t shortcut_sources_consumed = 0;
};

template <typename T>
struct StageModule {
  std::int64_t index = 0;  // 1-based
  std::vector<BottleneckBlock<T>> blocks;
  // Per-source persistent shortcut-normalization statistics (batch kind).
  std::vector<NormState<T>> outer_states;
  std::vector<NormState<T>> inner_states;

  Tensor<T> forward(const Tensor<T>& stage_input, const NetworkConfig& net_cfg,
                    NormMode mode, ForwardStats* stats) {
    const bool ds = variant_has_ds(net_cfg.variant);
    const bool inner_ds = variant_has_inner_ds(net_cfg.variant);
    AggregationCache<T> outer(net_cfg.shortcut_norm, mode);
    AggregationCache<T> inner(net_cfg.shortcut_norm, mode);
    std::vector<Tensor<T>> aggregates;
    aggregates.reserve(blocks.size());

    Tensor<T> cur = stage_input;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      Tensor<T> reduced = relu(b.bn1.forward(conv2d(cur, b.conv1, b.cfg.stride, 0), mode));

      Tensor<T> mid_in = reduced;
      if (inner_ds && l > 0) {
        std::vector<std::pair<std::int64_t, Tensor<T>>> ws;
        ws.reserve(l);
        for (std::size_t i = 0; i < l; ++i) {
          ws.emplace_back(static_cast<std::int64_t>(i), b.ds2_w[i]);
        }
        mid_in = aggregate_block_input(reduced, inner, ws);
      }
      if (inner_ds) {
        inner.register_source(static_cast<std::int64_t>(l), reduced, &inner_states[l]);
      }

      Tensor<T> mid = relu(b.bn2.forward(conv2d(mid_in, b.conv2, 1, 1), mode));
      Tensor<T> x = b.bn3.forward(conv2d(mid, b.conv3, 1, 0), mode);

      Tensor<T> a;
      if (l == 0) {
        a = add(x, b.proj_bn.forward(conv2d(stage_input, b.proj_w, b.cfg.stride, 0), mode));
      } else if (net_cfg.variant == Variant::resnet) {
        a = add(x, cur);
      } else if (net_cfg.variant == Variant::resnet_dense) {
        a = naive_dense_identity_sum(aggregates, x);
      } else {
        std::vector<std::pair<std::int64_t, Tensor<T>>> ws;
        ws.reserve(l);
        for (std::size_t i = 0; i < l; ++i) {
          ws.emplace_back(static_cast<std::int64_t>(i), b.ds_w[i]);
        }
        a = aggregate_block_input(x, outer, ws);
      }
      Tensor<T> y = relu(a);

      if (ds) {
        outer.register_source(
            static_cast<std::int64_t>(l),
            variant_sources_are_aggregates(net_cfg.variant) ? y : x, &outer_states[l]);
      }
      aggregates.push_back(y);
      cur = y;
    }

    if (stats != nullptr) {
      stats->shortcut_norm_runs += outer.normalize_runs() + inner.normalize_runs();
      stats->shortcut_norm_requests += outer.requests() + inner.requests();
      stats->shortcut_sources_consumed += outer.consumed_sources() + inner.consumed_sources();
    }
    return cur;
  }
};

template <typename T>
class Network {
 public:
  NetworkConfig cfg;
  Tensor<T> stem_conv;
  NormLayer<T> stem_bn;
  std::vector<StageModule<T>> stages;
  Tensor<T> fc_w, fc_b;
  ParameterRegistry<T> params;

  Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  // Persistent running-statistics buffers in canonical serialization order.
  // Collected on demand so the references are always into this object.
  std::vector<NormStateRef<T>> collect_buffers() {
    std::vector<NormStateRef<T>> refs;
    refs.push_back({"stem.bn", &stem_bn.state, stem_conv.shape().n});
    for (auto& stage : stages) {
      const std::string sname = "stage" + std::to_string(stage.index);
      for (auto& b : stage.blocks) {
        const std::string bname = sname + ".block" + std::to_string(b.index);
        refs.push_back({bname + ".bn1", &b.bn1.state, b.cfg.c_mid});
        refs.push_back({bname + ".bn2", &b.bn2.state, b.cfg.c_mid});
        refs.push_back({bname + ".bn3", &b.bn3.state, b.cfg.c_out});
        if (b.cfg.has_projection) {
          refs.push_back({bname + ".proj.bn", &b.proj_bn.state, b.cfg.c_out});
        }
      }
      if (variant_has_ds(cfg.variant) && cfg.shortcut_norm.kind == NormKind::batch) {
        for (std::size_t i = 0; i < stage.blocks.size(); ++i) {
          const auto& b0 = stage.blocks[i];
          refs.push_back({sname + ".dsnorm" + std::to_string(i),
                          &stage.outer_states[i], b0.cfg.c_out});
          if (variant_has_inner_ds(cfg.variant)) {
            refs.push_back({sname + ".ds2norm" + std::to_string(i),
                            &stage.inner_states[i], b0.cfg.c_mid});
          }
        }
      }
    }
    return refs;
  }

  // Evaluation mode uses frozen running statistics and records no gradients.
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, ForwardStats* stats = nullptr) {
    std::optional<NoGradGuard> guard;
    if (mode == NormMode::eval) guard.emplace();

    const std::int64_t want = cfg.stem == StemKind::cifar ? 32 : 224;
    if (x.shape().c != 3 || x.shape().h != want || x.shape().w != want) {
      throw ShapeError("stem expects (n, 3, " + std::to_string(want) + ", " +
                       std::to_string(want) + "), got " + x.shape().str());
    }

    Tensor<T> cur;
    if (cfg.stem == StemKind::imagenet) {
      cur = relu(stem_bn.forward(conv2d(x, stem_conv, 2, 3), mode));
      cur = max_pool2d(cur, 3, 2, 1);
    } else {
      cur = relu(stem_bn.forward(conv2d(x, stem_conv, 1, 1), mode));
    }
    for (auto& stage : stages) cur = stage.forward(cur, cfg, mode, stats);
    return linear(global_avg_pool(cur), fc_w, fc_b);
  }
};

template <typename T>
Network<T> build_network(const NetworkConfig& cfg) {
  validate_config(cfg);
  Network<T> net;
  net.cfg = cfg;
  std::mt19937_64 rng(cfg.seed);

  auto conv_param = [&](const std::string& name, std::int64_t c_out, std::int64_t c_in,
                        std::int64_t k) {
    Tensor<T> w(Shape{c_out, c_in, k, k});
    if (cfg.conv_init == ConvInit::he_fanout) {
      fill_randn(w, rng, std::sqrt(2.0 / static_cast<double>(k * k * c_out)));
    }
    w.make_leaf();
    net.params.add(name, w);
    return w;
  };
  auto norm_param = [&](const std::string& name, NormLayer<T>& layer, std::int64_t c) {
    layer.init(c);
    net.params.add(name + ".gamma", layer.gamma);
    net.params.add(name + ".beta", layer.beta);
  };
  auto shortcut_param = [&](const std::string& name, std::int64_t c,
                            std::int64_t target_block) {
    T v = T(0);
    switch (cfg.w_init) {
      case ShortcutInit::ones: v = T(1); break;
      case ShortcutInit::zeros: v = T(0); break;
      case ShortcutInit::harmonic:
        v = T(1) / static_cast<T>(target_block + 1);
        break;
    }
    Tensor<T> w = Tensor<T>::full(Shape{1, c, 1, 1}, v);
    w.make_leaf();
    net.params.add(name, w);
    return w;
  };

  const std::int64_t stem_out = cfg.stages[0].c_mid;
  net.stem_conv = conv_param("stem.conv", stem_out, 3,
                             cfg.stem == StemKind::cifar ? 3 : 7);
  norm_param("stem.bn", net.stem_bn, stem_out);

  std::int64_t in_c = stem_out;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& plan = cfg.stages[s];
    const std::int64_t mid = plan.c_mid;
    const std::int64_t out = 4 * mid;
    StageModule<T> stage;
    stage.index = static_cast<std::int64_t>(s) + 1;
    const std::string sname = "stage" + std::to_string(stage.index);

    for (std::int64_t l = 0; l < plan.blocks; ++l) {
      BottleneckBlock<T> b;
      b.index = l;
      b.cfg.c_in = l == 0 ? in_c : out;
      b.cfg.c_mid = mid;
      b.cfg.c_out = out;
      b.cfg.stride = (l == 0 && s > 0) ? 2 : 1;
      b.cfg.has_projection = l == 0;
      const std::string bname = sname + ".block" + std::to_string(l);

      b.conv1 = conv_param(bname + ".conv1", mid, b.cfg.c_in, 1);
      norm_param(bname + ".bn1", b.bn1, mid);
      b.conv2 = conv_param(bname + ".conv2", mid, mid, 3);
      norm_param(bname + ".bn2", b.bn2, mid);
      b.conv3 = conv_param(bname + ".conv3", out, mid, 1);
      norm_param(bname + ".bn3", b.bn3, out);
      if (b.cfg.has_projection) {
        b.proj_w = conv_param(bname + ".proj.conv", out, b.cfg.c_in, 1);
        norm_param(bname + ".proj.bn", b.proj_bn, out);
      }
      if (variant_has_ds(cfg.variant)) {
        for (std::int64_t i = 0; i < l; ++i) {
          b.ds_w.push_back(
              shortcut_param(bname + ".ds" + std::to_string(i), out, l));
        }
        if (variant_has_inner_ds(cfg.variant)) {
          for (std::int64_t i = 0; i < l; ++i) {
            b.ds2_w.push_back(
                shortcut_param(bname + ".ds2_" + std::to_string(i), mid, l));
          }
        }
      }
      stage.blocks.push_back(std::move(b));
    }

    stage.outer_states.resize(static_cast<std::size_t>(plan.blocks));
    stage.inner_states.resize(static_cast<std::size_t>(plan.blocks));
    net.stages.push_back(std::move(stage));
    in_c = out;
  }

  net.fc_w = Tensor<T>(Shape{cfg.classes, in_c, 1, 1});
  if (cfg.conv_init == ConvInit::he_fanout) fill_randn(net.fc_w, rng, 0.01);
  net.fc_w.make_leaf();
  net.params.add("fc.w", net.fc_w);
  net.fc_b = Tensor<T>::zeros(Shape{1, cfg.classes, 1, 1});
  net.fc_b.make_leaf();
  net.params.add("fc.b", net.fc_b);

  return net;
}

}  // namespace dsnet
