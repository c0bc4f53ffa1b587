#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dsnet/common.hpp"

namespace dsnet {

enum class CifarVariant { cifar10, cifar100 };

inline std::string cifar_variant_name(CifarVariant v) {
  return v == CifarVariant::cifar10 ? "cifar10" : "cifar100";
}

inline CifarVariant cifar_variant_from_name(const std::string& s) {
  if (s == "cifar10") return CifarVariant::cifar10;
  if (s == "cifar100") return CifarVariant::cifar100;
  throw ConfigError("unknown dataset '" + s + "'");
}

inline std::int64_t cifar_classes(CifarVariant v) {
  return v == CifarVariant::cifar10 ? 10 : 100;
}

// 8-bit channel-planar RGB images, 3072 bytes each, with fine labels.
struct Dataset {
  std::vector<std::uint8_t> images;
  std::vector<std::int64_t> labels;
  std::int64_t count = 0;
  std::int64_t classes = 0;
  std::string split;

  const std::uint8_t* image(std::int64_t i) const { return images.data() + i * 3072; }
};

inline Dataset load_cifar_file(const std::string& path, CifarVariant variant) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  const std::size_t record = variant == CifarVariant::cifar10 ? 3073 : 3074;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw DataError("truncated CIFAR file '" + path + "': " +
                    std::to_string(bytes.size()) + " bytes is not a multiple of " +
                    std::to_string(record));
  }
  Dataset ds;
  ds.count = static_cast<std::int64_t>(bytes.size() / record);
  ds.classes = cifar_classes(variant);
  ds.images.resize(static_cast<std::size_t>(ds.count) * 3072);
  ds.labels.resize(static_cast<std::size_t>(ds.count));
  for (std::int64_t i = 0; i < ds.count; ++i) {
    const std::uint8_t* rec = bytes.data() + static_cast<std::size_t>(i) * record;
    const std::uint8_t label = variant == CifarVariant::cifar10 ? rec[0] : rec[1];
    if (label >= ds.classes) {
      throw DataError("label " + std::to_string(label) + " out of range in '" + path +
                      "' (record " + std::to_string(i) + ")");
    }
    ds.labels[static_cast<std::size_t>(i)] = label;
    std::copy_n(rec + record - 3072, 3072,
                ds.images.data() + static_cast<std::size_t>(i) * 3072);
  }
  return ds;
}

// Loads the canonical file set for a split from a directory of CIFAR binaries.
inline Dataset load_cifar(const std::string& dir, CifarVariant variant,
                          const std::string& split) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (variant == CifarVariant::cifar10) {
    if (split == "train") {
      for (int i = 1; i <= 5; ++i) {
        files.push_back((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin"))
                            .string());
      }
    } else if (split == "test") {
      files.push_back((fs::path(dir) / "test_batch.bin").string());
    } else {
      throw ConfigError("unknown split '" + split + "'");
    }
  } else {
    if (split != "train" && split != "test") {
      throw ConfigError("unknown split '" + split + "'");
    }
    files.push_back((fs::path(dir) / (split + ".bin")).string());
  }

  Dataset ds;
  ds.classes = cifar_classes(variant);
  ds.split = split;
  for (const auto& f : files) {
    Dataset part = load_cifar_file(f, variant);
    ds.images.insert(ds.images.end(), part.images.begin(), part.images.end());
    ds.labels.insert(ds.labels.end(), part.labels.begin(), part.labels.end());
    ds.count += part.count;
  }
  return ds;
}

// Per-channel mean and standard deviation of pixel values scaled to [0, 1].
struct ChannelStats {
  double mean[3] = {0, 0, 0};
  double stddev[3] = {1, 1, 1};
};

inline ChannelStats compute_channel_stats(const Dataset& ds) {
  if (ds.count == 0) throw DataError("channel statistics of an empty dataset");
  ChannelStats st;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sumsq = 0.0;
    for (std::int64_t i = 0; i < ds.count; ++i) {
      const std::uint8_t* plane = ds.image(i) + c * 1024;
      for (int p = 0; p < 1024; ++p) {
        const double v = plane[p] / 255.0;
        sum += v;
        sumsq += v * v;
      }
    }
    const double n = static_cast<double>(ds.count) * 1024.0;
    st.mean[c] = sum / n;
    const double var = std::max(0.0, sumsq / n - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::max(std::sqrt(var), 1e-8);
  }
  return st;
}

// One sampled augmentation: crop offset into the 4-pixel-padded image and a
// horizontal-flip decision. Offset (4, 4) with no flip is the identity crop.
struct AugmentDraw {
  int dy = 4;
  int dx = 4;
  bool flip = false;
};

inline AugmentDraw draw_augment(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> off(0, 8);
  std::bernoulli_distribution coin(0.5);
  AugmentDraw d;
  d.dy = off(rng);
  d.dx = off(rng);
  d.flip = coin(rng);
  return d;
}

inline void flip_horizontal(std::uint8_t* img) {
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 32; ++y) {
      std::uint8_t* row = img + c * 1024 + y * 32;
      std::reverse(row, row + 32);
    }
  }
}

// Zero-pad to 40x40, crop 32x32 at the drawn offset, flip, then standardize
// by the training-set channel statistics. Output is channel-planar 3x32x32.
template <typename T>
void augment_into(const std::uint8_t* img, const AugmentDraw& d, const ChannelStats& st,
                  T* out) {
  for (int c = 0; c < 3; ++c) {
    const double mean = st.mean[c];
    const double inv = 1.0 / st.stddev[c];
    const std::uint8_t* plane = img + c * 1024;
    T* oplane = out + c * 1024;
    for (int j = 0; j < 32; ++j) {
      const int sy = d.dy + j - 4;
      for (int i = 0; i < 32; ++i) {
        const int xi = d.flip ? 31 - i : i;
        const int sx = d.dx + xi - 4;
        double px = 0.0;
        if (sy >= 0 && sy < 32 && sx >= 0 && sx < 32) {
          px = plane[sy * 32 + sx] / 255.0;
        }
        oplane[j * 32 + i] = static_cast<T>((px - mean) * inv);
      }
    }
  }
}

// Evaluation-path preprocessing: standardization only.
template <typename T>
void standardize_into(const std::uint8_t* img, const ChannelStats& st, T* out) {
  augment_into(img, AugmentDraw{4, 4, false}, st, out);
}

}  // namespace dsnet
