#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsnet/cifar.hpp"
#include "dsnet/common.hpp"
#include "dsnet/config_io.hpp"
#include "dsnet/network.hpp"
#include "dsnet/train_config.hpp"

namespace dsnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() { return 1; }
template <>
constexpr std::uint8_t dtype_code<double>() { return 2; }

inline std::size_t dtype_size(std::uint8_t code) {
  if (code == 1) return 4;
  if (code == 2) return 8;
  throw CheckpointError("unknown dtype code " + std::to_string(code));
}

// One named tensor record: little-endian payload plus its declared shape.
struct CheckpointEntry {
  std::string name;
  std::uint8_t dtype = 0;
  std::vector<std::int64_t> dims;
  std::vector<unsigned char> raw;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

// Parsed checkpoint: the verbatim JSON header (so rewriting reproduces the
// file byte for byte) plus its decoded fields and the tensor records.
struct Checkpoint {
  std::string config_json;
  std::vector<CheckpointEntry> entries;

  NetworkConfig network;
  TrainConfig train;
  std::int64_t iteration = 0;
  std::string rng_state;
  bool has_channel_stats = false;
  ChannelStats channel_stats;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

struct ByteReader {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos = 0;

  bool at_end() const { return pos == size; }

  void need(std::size_t k, const char* what) {
    if (pos + k > size) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return data[pos++];
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = static_cast<std::uint32_t>(data[pos]) |
                      (static_cast<std::uint32_t>(data[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(data[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(data[pos + 3]) << 24);
    pos += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data + pos), n);
    pos += n;
    return s;
  }

  std::vector<unsigned char> bytes(std::size_t n, const char* what) {
    need(n, what);
    std::vector<unsigned char> b(data + pos, data + pos + n);
    pos += n;
    return b;
  }
};

}  // namespace detail

template <typename T>
CheckpointEntry make_entry(const std::string& name, const std::vector<T>& values,
                           std::vector<std::int64_t> dims) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = dtype_code<T>();
  e.dims = std::move(dims);
  if (e.numel() != static_cast<std::int64_t>(values.size())) {
    throw CheckpointError("entry '" + name + "' shape does not match its data");
  }
  e.raw.resize(values.size() * sizeof(T));
  std::memcpy(e.raw.data(), values.data(), e.raw.size());
  return e;
}

template <typename T>
CheckpointEntry make_entry(const std::string& name, const Tensor<T>& t) {
  const auto s = t.shape();
  return make_entry<T>(name, t.vec(), {s.n, s.c, s.h, s.w});
}

// Decodes an entry into a same-type vector, validating dtype and element count.
template <typename T>
std::vector<T> entry_values(const CheckpointEntry& e) {
  if (e.dtype != dtype_code<T>()) {
    throw CheckpointError("entry '" + e.name + "' has dtype code " +
                          std::to_string(e.dtype) + ", expected " +
                          std::to_string(dtype_code<T>()));
  }
  if (e.raw.size() != static_cast<std::size_t>(e.numel()) * sizeof(T)) {
    throw CheckpointError("entry '" + e.name + "' payload size does not match its shape");
  }
  std::vector<T> out(static_cast<std::size_t>(e.numel()));
  std::memcpy(out.data(), e.raw.data(), e.raw.size());
  return out;
}

inline std::string shape_str(const std::vector<std::int64_t>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

// Assembles the JSON header and the parameter plus buffer records for a
// network. Optimizer records are appended by the caller that owns them.
template <typename T>
Checkpoint make_checkpoint(Network<T>& net, const TrainConfig& train,
                           std::int64_t iteration, const std::string& rng_state,
                           const ChannelStats* stats = nullptr) {
  Checkpoint ckpt;
  ckpt.network = net.cfg;
  ckpt.train = train;
  ckpt.iteration = iteration;
  ckpt.rng_state = rng_state;

  nlohmann::json j = {{"network", network_config_to_json(net.cfg)},
                      {"train", train_config_to_json(train)},
                      {"iteration", iteration},
                      {"rng", rng_state}};
  if (stats != nullptr) {
    ckpt.has_channel_stats = true;
    ckpt.channel_stats = *stats;
    j["channel_stats"] = channel_stats_to_json(*stats);
  }
  ckpt.config_json = j.dump();

  for (const auto& e : net.params.entries()) {
    ckpt.entries.push_back(make_entry(e.name, e.tensor));
  }
  for (const auto& ref : net.collect_buffers()) {
    if (!ref.state->initialized) continue;
    ckpt.entries.push_back(make_entry<T>("buffer/" + ref.name + ".mean",
                                         ref.state->running_mean,
                                         {1, ref.channels, 1, 1}));
    ckpt.entries.push_back(make_entry<T>("buffer/" + ref.name + ".var",
                                         ref.state->running_var,
                                         {1, ref.channels, 1, 1}));
  }
  return ckpt;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<unsigned char> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  out.insert(out.end(), ckpt.config_json.begin(), ckpt.config_json.end());

  for (const auto& e : ckpt.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(e.dtype);
    out.push_back(static_cast<unsigned char>(e.dims.size()));
    for (auto d : e.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());

  detail::ByteReader r{data.data(), data.size()};
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  const std::uint32_t json_len = r.u32("config length");
  ckpt.config_json = r.str(json_len, "config");
  const auto j = parse_json(ckpt.config_json, "checkpoint config");
  if (!j.contains("network")) throw CheckpointError("checkpoint config lacks 'network'");
  try {
    ckpt.network = network_config_from_json(j.at("network"));
    ckpt.train = train_config_from_json(j.value("train", nlohmann::json::object()));
    ckpt.iteration = j.value("iteration", std::int64_t{0});
    ckpt.rng_state = j.value("rng", std::string{});
    if (j.contains("channel_stats")) {
      ckpt.has_channel_stats = true;
      ckpt.channel_stats = channel_stats_from_json(j.at("channel_stats"));
    }
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }

  while (!r.at_end()) {
    CheckpointEntry e;
    const std::uint32_t name_len = r.u32("entry name length");
    e.name = r.str(name_len, "entry name");
    e.dtype = r.u8("entry dtype");
    const std::uint8_t rank = r.u8("entry rank");
    for (std::uint8_t i = 0; i < rank; ++i) {
      e.dims.push_back(static_cast<std::int64_t>(r.u32("entry dims")));
    }
    e.raw = r.bytes(static_cast<std::size_t>(e.numel()) * dtype_size(e.dtype),
                    e.name.c_str());
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

// Restores parameters and running statistics. All records are validated
// against the network before anything is written, so a mismatch leaves the
// network untouched.
template <typename T>
void apply_checkpoint(Network<T>& net, const Checkpoint& ckpt) {
  auto refs = net.collect_buffers();

  struct ParamPlan {
    Tensor<T>* dst;
    const CheckpointEntry* src;
  };
  struct BufferPlan {
    NormState<T>* state;
    const CheckpointEntry* mean;
    const CheckpointEntry* var;
  };
  std::vector<ParamPlan> param_plans;
  std::vector<BufferPlan> buffer_plans;

  for (auto& pe : net.params.entries()) {
    const auto* e = ckpt.find(pe.name);
    if (e == nullptr) {
      throw CheckpointError("checkpoint lacks parameter '" + pe.name + "'");
    }
    const auto s = pe.tensor.shape();
    const std::vector<std::int64_t> want = {s.n, s.c, s.h, s.w};
    if (e->dims != want) {
      throw CheckpointError("parameter '" + pe.name + "': checkpoint shape " +
                            shape_str(e->dims) + " does not match network shape " +
                            shape_str(want));
    }
    if (e->dtype != dtype_code<T>()) {
      throw CheckpointError("parameter '" + pe.name + "' has a different precision");
    }
    param_plans.push_back({&pe.tensor, e});
  }

  std::unordered_map<std::string, NormStateRef<T>*> by_name;
  for (auto& ref : refs) by_name[ref.name] = &ref;
  for (const auto& e : ckpt.entries) {
    if (e.name.rfind("buffer/", 0) != 0) continue;
    std::string base = e.name.substr(7);
    const bool is_mean = base.size() > 5 && base.compare(base.size() - 5, 5, ".mean") == 0;
    const bool is_var = base.size() > 4 && base.compare(base.size() - 4, 4, ".var") == 0;
    if (!is_mean && !is_var) {
      throw CheckpointError("unrecognized buffer entry '" + e.name + "'");
    }
    if (is_var) continue;  // handled with its mean
    base.resize(base.size() - 5);
    auto it = by_name.find(base);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint buffer '" + base +
                            "' does not exist in this network");
    }
    const auto* var = ckpt.find("buffer/" + base + ".var");
    if (var == nullptr) {
      throw CheckpointError("checkpoint buffer '" + base + "' lacks its variance");
    }
    const std::vector<std::int64_t> want = {1, it->second->channels, 1, 1};
    if (e.dims != want || var->dims != want) {
      throw CheckpointError("buffer '" + base + "': checkpoint shape " +
                            shape_str(e.dims) + " does not match network shape " +
                            shape_str(want));
    }
    buffer_plans.push_back({it->second->state, &e, var});
  }

  for (auto& plan : param_plans) {
    auto values = entry_values<T>(*plan.src);
    std::copy(values.begin(), values.end(), plan.dst->data());
  }
  for (auto& plan : buffer_plans) {
    plan.state->running_mean = entry_values<T>(*plan.mean);
    plan.state->running_var = entry_values<T>(*plan.var);
    plan.state->initialized = true;
  }
}

}  // namespace dsnet
