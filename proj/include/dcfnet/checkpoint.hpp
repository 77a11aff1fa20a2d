// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Checkpoint container, bit-exact layout:
//   magic "DCFN" | u32 LE version | u32 LE config length | UTF-8 config blob |
//   per tensor, in lexicographic name order:
//     u32 LE name length | name | u32 LE rank | u32 LE extents... |
//     row-major payload as little-endian IEEE-754 float32
// Optimizer state rides along as tensors under the reserved "optim." prefix;
// step/epoch counters live in the config blob.

#pragma once

#include <json.hpp>

#include "dcfnet/nn.hpp"

namespace dcfnet {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_json;
  std::map<std::string, CheckpointTensor> tensors;  // lexicographic by key
};

namespace detail {

inline void put_u32_le(std::string& out, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.append(b, 4);
}

inline uint32_t read_u32_le(const std::string& buf, size_t& pos, const std::string& path) {
  if (pos + 4 > buf.size()) throw IoError("checkpoint truncated: " + path);
  const uint32_t v = uint32_t(uint8_t(buf[pos])) | uint32_t(uint8_t(buf[pos + 1])) << 8 |
                     uint32_t(uint8_t(buf[pos + 2])) << 16 | uint32_t(uint8_t(buf[pos + 3])) << 24;
  pos += 4;
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out += "DCFN";
  detail::put_u32_le(out, kCheckpointVersion);
  detail::put_u32_le(out, static_cast<uint32_t>(ckpt.config_json.size()));
  out += ckpt.config_json;
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_u32_le(out, static_cast<uint32_t>(name.size()));
    out += name;
    detail::put_u32_le(out, static_cast<uint32_t>(t.shape.size()));
    for (size_t e : t.shape) detail::put_u32_le(out, static_cast<uint32_t>(e));
    const size_t n = shape_numel(t.shape);
    check(n == t.data.size(), "checkpoint: payload size mismatch for " + name);
    for (float v : t.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32_le(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "DCFN") != 0)
    throw IoError("not a checkpoint (bad magic): " + path);
  size_t pos = 4;
  const uint32_t version = detail::read_u32_le(buf, pos, path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version mismatch in " + path + ": got " + std::to_string(version) +
                  ", want " + std::to_string(kCheckpointVersion));
  const uint32_t cfg_len = detail::read_u32_le(buf, pos, path);
  if (pos + cfg_len > buf.size()) throw IoError("checkpoint truncated: " + path);
  Checkpoint ckpt;
  ckpt.config_json = buf.substr(pos, cfg_len);
  pos += cfg_len;
  while (pos < buf.size()) {
    const uint32_t name_len = detail::read_u32_le(buf, pos, path);
    if (pos + name_len > buf.size()) throw IoError("checkpoint truncated: " + path);
    std::string name = buf.substr(pos, name_len);
    pos += name_len;
    const uint32_t rank = detail::read_u32_le(buf, pos, path);
    CheckpointTensor t;
    for (uint32_t i = 0; i < rank; ++i)
      t.shape.push_back(detail::read_u32_le(buf, pos, path));
    const size_t n = shape_numel(t.shape);
    if (pos + 4 * n > buf.size()) throw IoError("checkpoint truncated: " + path);
    t.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const uint32_t bits = detail::read_u32_le(buf, pos, path);
      std::memcpy(&t.data[i], &bits, 4);
    }
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second)
      throw IoError("checkpoint has duplicate tensor name: " + path);
  }
  return ckpt;
}

// Stages parameters (and optionally optimizer moments) into a checkpoint.
template <typename T>
Checkpoint make_checkpoint(const ModelParameters<T>& params, const std::string& config_json) {
  Checkpoint ckpt;
  ckpt.config_json = config_json;
  for (const auto& [name, t] : params.entries()) {
    CheckpointTensor ct;
    ct.shape = t.shape();
    ct.data.assign(t.data().begin(), t.data().end());
    ckpt.tensors.emplace(name, std::move(ct));
  }
  return ckpt;
}

// Validates every model parameter against the checkpoint before touching any
// of them; either the whole load applies or none of it does.
template <typename T>
void apply_checkpoint(ModelParameters<T>& params, const Checkpoint& ckpt) {
  for (const auto& [name, t] : params.entries()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw IoError("checkpoint missing parameter: " + name);
    if (it->second.shape != t.shape())
      throw IoError("checkpoint shape mismatch for " + name + ": file has " +
                    shape_str(it->second.shape) + ", model needs " + shape_str(t.shape()));
  }
  for (auto& [name, t] : params.entries()) {
    const auto& src = ckpt.tensors.at(name).data;
    auto dst = t.mutable_data();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

}  // namespace dcfnet
