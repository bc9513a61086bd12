#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "hgpt/optimizer.hpp"

namespace hgpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

// Layout: magic "HGPTCKPT" | u32 version | u64 json_len | config JSON |
// u64 n_tensors | n * (u32 name_len | name | u8 dtype | u32 rank |
// u64 dims[rank] | u64 byte_len | raw little-endian data).
constexpr char kCheckpointMagic[8] = {'H', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
constexpr uint8_t dtype_code() {
  if constexpr (std::is_same_v<S, float>) return 0;
  else if constexpr (std::is_same_v<S, double>) return 1;
  else static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
}

struct TensorRecord {
  std::string name;
  uint8_t dtype = 0;
  std::vector<int64_t> dims;
  std::vector<char> bytes;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
  }
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  return v;
}

inline void write_record(std::ostream& out, const TensorRecord& rec) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(rec.name.size()));
  out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
  write_pod<uint8_t>(out, rec.dtype);
  write_pod<uint32_t>(out, static_cast<uint32_t>(rec.dims.size()));
  for (int64_t d : rec.dims) write_pod<uint64_t>(out, static_cast<uint64_t>(d));
  write_pod<uint64_t>(out, static_cast<uint64_t>(rec.bytes.size()));
  out.write(rec.bytes.data(), static_cast<std::streamsize>(rec.bytes.size()));
}

template <typename S>
TensorRecord record_from(const std::string& name, const std::vector<int>& shape,
                         const std::vector<S>& data) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = dtype_code<S>();
  for (int d : shape) rec.dims.push_back(d);
  rec.bytes.resize(data.size() * sizeof(S));
  std::memcpy(rec.bytes.data(), data.data(), rec.bytes.size());
  return rec;
}

}  // namespace detail

// Writes every parameter (and, when given, Adam moments as opt.m.<name> /
// opt.v.<name>). Parameter names must be unique and non-empty.
template <typename S>
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamSet<S>& params, const AdamState<S>* opt = nullptr) {
  std::vector<TensorRecord> records;
  std::map<std::string, int> seen;
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor<S>& t = params.tensors()[i];
    if (t.name().empty()) throw CheckpointError("cannot checkpoint an unnamed tensor");
    if (++seen[t.name()] > 1) throw CheckpointError("duplicate tensor name: " + t.name());
    records.push_back(detail::record_from(t.name(), t.shape(), t.values()));
    if (opt && !opt->m.empty()) {
      if (opt->m.size() != params.size() || opt->m[i].size() != t.values().size()) {
        throw CheckpointError("optimizer state misaligned with parameters at " + t.name());
      }
      records.push_back(detail::record_from("opt.m." + t.name(), t.shape(), opt->m[i]));
      records.push_back(detail::record_from("opt.v." + t.name(), t.shape(), opt->v[i]));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<uint32_t>(out, kCheckpointVersion);
  detail::write_pod<uint64_t>(out, static_cast<uint64_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  detail::write_pod<uint64_t>(out, static_cast<uint64_t>(records.size()));
  for (const auto& rec : records) detail::write_record(out, rec);
  if (!out) throw IoError("write failed for checkpoint: " + path);
}

struct LoadedCheckpoint {
  uint32_t version = 0;
  std::string config_json;
  std::map<std::string, TensorRecord> tensors;

  const TensorRecord& require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint is missing tensor: " + name);
    return it->second;
  }
};

inline LoadedCheckpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic): " + path);
  }
  LoadedCheckpoint ck;
  ck.version = detail::read_pod<uint32_t>(in, "version");
  if (ck.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ck.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto json_len = detail::read_pod<uint64_t>(in, "config length");
  ck.config_json.resize(json_len);
  if (json_len && !in.read(ck.config_json.data(), static_cast<std::streamsize>(json_len))) {
    throw CheckpointError("truncated checkpoint while reading config");
  }
  const auto n_tensors = detail::read_pod<uint64_t>(in, "tensor count");
  for (uint64_t i = 0; i < n_tensors; ++i) {
    TensorRecord rec;
    const auto name_len = detail::read_pod<uint32_t>(in, "tensor name length");
    rec.name.resize(name_len);
    if (!in.read(rec.name.data(), name_len)) {
      throw CheckpointError("truncated checkpoint while reading tensor name");
    }
    rec.dtype = detail::read_pod<uint8_t>(in, ("dtype of " + rec.name).c_str());
    const auto rank = detail::read_pod<uint32_t>(in, "tensor rank");
    for (uint32_t r = 0; r < rank; ++r) {
      rec.dims.push_back(static_cast<int64_t>(detail::read_pod<uint64_t>(in, "tensor dims")));
    }
    const auto byte_len = detail::read_pod<uint64_t>(in, "tensor byte length");
    rec.bytes.resize(byte_len);
    if (byte_len && !in.read(rec.bytes.data(), static_cast<std::streamsize>(byte_len))) {
      throw CheckpointError("truncated checkpoint while reading data of " + rec.name);
    }
    std::string name = rec.name;
    if (!ck.tensors.emplace(name, std::move(rec)).second) {
      throw CheckpointError("duplicate tensor in checkpoint: " + name);
    }
  }
  return ck;
}

namespace detail {

template <typename S>
void copy_into(const TensorRecord& rec, const std::vector<int>& shape, std::vector<S>& dst) {
  if (rec.dtype != dtype_code<S>()) {
    throw CheckpointError("dtype mismatch for " + rec.name + ": checkpoint has code " +
                          std::to_string(rec.dtype) + ", model expects " +
                          std::to_string(dtype_code<S>()));
  }
  if (rec.dims.size() != shape.size() ||
      !std::equal(shape.begin(), shape.end(), rec.dims.begin(),
                  [](int a, int64_t b) { return static_cast<int64_t>(a) == b; })) {
    std::vector<int> got(rec.dims.begin(), rec.dims.end());
    throw CheckpointError("shape mismatch for " + rec.name + ": checkpoint " + shape_str(got) +
                          " vs model " + shape_str(shape));
  }
  if (rec.bytes.size() != dst.size() * sizeof(S)) {
    throw CheckpointError("payload size mismatch for " + rec.name);
  }
  std::memcpy(dst.data(), rec.bytes.data(), rec.bytes.size());
}

}  // namespace detail

template <typename S>
void restore_params(const LoadedCheckpoint& ck, const ParamSet<S>& params) {
  for (const auto& t : params.tensors()) {
    detail::copy_into(ck.require(t.name()), t.shape(), t.impl()->data);
  }
}

template <typename S>
void restore_opt(const LoadedCheckpoint& ck, const ParamSet<S>& params, AdamState<S>& opt) {
  opt.m.assign(params.size(), {});
  opt.v.assign(params.size(), {});
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor<S>& t = params.tensors()[i];
    opt.m[i].resize(t.values().size());
    opt.v[i].resize(t.values().size());
    detail::copy_into(ck.require("opt.m." + t.name()), t.shape(), opt.m[i]);
    detail::copy_into(ck.require("opt.v." + t.name()), t.shape(), opt.v[i]);
  }
}

// True if the checkpoint carries optimizer moments.
inline bool has_optimizer_state(const LoadedCheckpoint& ck) {
  for (const auto& [name, rec] : ck.tensors) {
    if (name.rfind("opt.m.", 0) == 0) return true;
  }
  return false;
}

}  // namespace hgpt
