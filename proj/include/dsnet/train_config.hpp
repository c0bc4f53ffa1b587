#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsnet/cifar.hpp"
#include "dsnet/common.hpp"

namespace dsnet {

enum class Precision { f32, f64 };

inline std::string precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

inline Precision precision_from_name(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "'");
}

// Desk-scale defaults: a 1/8 compression of the reference schedule with the
// milestone ratios (1/2 and 3/4 of budget) preserved.
struct TrainConfig {
  std::int64_t iterations = 8000;
  std::int64_t batch = 128;
  double lr = 0.1;
  std::vector<std::int64_t> milestones = {4000, 6000};
  double decay = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  std::int64_t log_interval = 100;
  std::int64_t eval_interval = 1000;
  CifarVariant dataset = CifarVariant::cifar10;
  bool deterministic = false;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (cfg.batch < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.lr <= 0 || cfg.decay <= 0) throw ConfigError("lr and decay must be positive");
  if (cfg.log_interval < 1) throw ConfigError("log interval must be >= 1");
  std::int64_t prev = 0;
  for (std::int64_t m : cfg.milestones) {
    if (m <= prev || m >= cfg.iterations) {
      throw ConfigError("milestones must be strictly increasing and below the "
                        "iteration budget");
    }
    prev = m;
  }
}

// Piecewise-constant schedule: base rate decayed once per passed milestone.
inline double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  int passed = 0;
  for (std::int64_t m : cfg.milestones) {
    if (iter >= m) ++passed;
  }
  return cfg.lr * std::pow(cfg.decay, passed);
}

}  // namespace dsnet
