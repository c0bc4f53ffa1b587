#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "dsnet/cifar.hpp"
#include "dsnet/common.hpp"
#include "dsnet/network.hpp"
#include "dsnet/train_config.hpp"

namespace dsnet {

namespace detail {

template <typename V>
V json_get(const nlohmann::json& j, const char* key, const V& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json norm_spec_to_json(const NormSpec& spec) {
  return {{"kind", norm_kind_name(spec.kind)},
          {"groups", spec.groups},
          {"eps", spec.eps},
          {"momentum", spec.momentum},
          {"affine", spec.affine}};
}

inline NormSpec norm_spec_from_json(const nlohmann::json& j, const NormSpec& base) {
  NormSpec spec = base;
  spec.kind = norm_kind_from_name(
      detail::json_get<std::string>(j, "kind", norm_kind_name(base.kind)));
  spec.groups = detail::json_get<std::int64_t>(j, "groups", base.groups);
  spec.eps = detail::json_get<double>(j, "eps", base.eps);
  spec.momentum = detail::json_get<double>(j, "momentum", base.momentum);
  spec.affine = detail::json_get<bool>(j, "affine", base.affine);
  return spec;
}

inline nlohmann::json network_config_to_json(const NetworkConfig& cfg) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : cfg.stages) {
    stages.push_back({{"blocks", st.blocks}, {"mid", st.c_mid}});
  }
  return {{"variant", variant_name(cfg.variant)},
          {"stem", stem_name(cfg.stem)},
          {"classes", cfg.classes},
          {"depth", cfg.depth},
          {"width", cfg.width},
          {"stages", stages},
          {"shortcut_norm", norm_spec_to_json(cfg.shortcut_norm)},
          {"w_init", shortcut_init_name(cfg.w_init)},
          {"conv_init", cfg.conv_init == ConvInit::he_fanout ? "he" : "zeros"},
          {"seed", cfg.seed}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig defaults;
  const auto variant = variant_from_name(
      detail::json_get<std::string>(j, "variant", variant_name(defaults.variant)));
  const auto stem =
      stem_from_name(detail::json_get<std::string>(j, "stem", stem_name(defaults.stem)));
  const auto classes = detail::json_get<std::int64_t>(j, "classes", defaults.classes);

  NetworkConfig cfg;
  if (j.contains("stages")) {
    std::vector<StagePlan> stages;
    try {
      for (const auto& st : j.at("stages")) {
        stages.push_back({detail::json_get<std::int64_t>(st, "blocks", 0),
                          detail::json_get<std::int64_t>(st, "mid", 0)});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field 'stages': ") + e.what());
    }
    cfg = custom_config(variant, std::move(stages), stem, classes);
    cfg.depth = detail::json_get<std::int64_t>(j, "depth", 0);
    cfg.width = detail::json_get<double>(j, "width", 1.0);
  } else {
    cfg = preset_config(variant,
                        detail::json_get<std::int64_t>(j, "depth", 26),
                        detail::json_get<double>(j, "width", 1.0), stem, classes);
  }
  if (j.contains("shortcut_norm")) {
    cfg.shortcut_norm = norm_spec_from_json(j.at("shortcut_norm"), cfg.shortcut_norm);
  }
  cfg.w_init = shortcut_init_from_name(
      detail::json_get<std::string>(j, "w_init", shortcut_init_name(cfg.w_init)));
  const auto conv_init = detail::json_get<std::string>(
      j, "conv_init", cfg.conv_init == ConvInit::he_fanout ? "he" : "zeros");
  if (conv_init == "he") {
    cfg.conv_init = ConvInit::he_fanout;
  } else if (conv_init == "zeros") {
    cfg.conv_init = ConvInit::zeros;
  } else {
    throw ConfigError("unknown conv_init '" + conv_init + "'");
  }
  cfg.seed = detail::json_get<std::uint64_t>(j, "seed", cfg.seed);
  validate_config(cfg);
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"iterations", cfg.iterations},
          {"batch", cfg.batch},
          {"lr", cfg.lr},
          {"milestones", cfg.milestones},
          {"decay", cfg.decay},
          {"weight_decay", cfg.weight_decay},
          {"momentum", cfg.momentum},
          {"seed", cfg.seed},
          {"precision", precision_name(cfg.precision)},
          {"log_interval", cfg.log_interval},
          {"eval_interval", cfg.eval_interval},
          {"dataset", cifar_variant_name(cfg.dataset)},
          {"deterministic", cfg.deterministic}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.iterations = detail::json_get<std::int64_t>(j, "iterations", cfg.iterations);
  cfg.batch = detail::json_get<std::int64_t>(j, "batch", cfg.batch);
  cfg.lr = detail::json_get<double>(j, "lr", cfg.lr);
  cfg.milestones =
      detail::json_get<std::vector<std::int64_t>>(j, "milestones", cfg.milestones);
  cfg.decay = detail::json_get<double>(j, "decay", cfg.decay);
  cfg.weight_decay = detail::json_get<double>(j, "weight_decay", cfg.weight_decay);
  cfg.momentum = detail::json_get<double>(j, "momentum", cfg.momentum);
  cfg.seed = detail::json_get<std::uint64_t>(j, "seed", cfg.seed);
  cfg.precision = precision_from_name(
      detail::json_get<std::string>(j, "precision", precision_name(cfg.precision)));
  cfg.log_interval = detail::json_get<std::int64_t>(j, "log_interval", cfg.log_interval);
  cfg.eval_interval =
      detail::json_get<std::int64_t>(j, "eval_interval", cfg.eval_interval);
  cfg.dataset = cifar_variant_from_name(
      detail::json_get<std::string>(j, "dataset", cifar_variant_name(cfg.dataset)));
  cfg.deterministic = detail::json_get<bool>(j, "deterministic", cfg.deterministic);
  validate_train_config(cfg);
  return cfg;
}

inline nlohmann::json channel_stats_to_json(const ChannelStats& st) {
  return {{"mean", {st.mean[0], st.mean[1], st.mean[2]}},
          {"stddev", {st.stddev[0], st.stddev[1], st.stddev[2]}}};
}

inline ChannelStats channel_stats_from_json(const nlohmann::json& j) {
  ChannelStats st;
  const auto mean = detail::json_get<std::vector<double>>(j, "mean", {0, 0, 0});
  const auto stddev = detail::json_get<std::vector<double>>(j, "stddev", {1, 1, 1});
  if (mean.size() != 3 || stddev.size() != 3) {
    throw ConfigError("channel statistics need 3 entries per channel");
  }
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = mean[static_cast<std::size_t>(c)];
    st.stddev[c] = stddev[static_cast<std::size_t>(c)];
  }
  return st;
}

inline nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace dsnet
