#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcl/models.hpp"
#include "hcl/serial.hpp"

namespace hcl::pipeline {

// Binary layout (little-endian):
//   magic "HCL1", u32 version, u8 stage, u64 step, u32 tensor_count,
//   per tensor: u16 name_len, name bytes, u8 rank, rank x u64 dims, f32 data;
//   queue block: u32 filled, u32 dim, filled*dim f32 rows (oldest first);
//   rng block: u32 length, raw bytes.
inline constexpr char kCheckpointMagic[4] = {'H', 'C', 'L', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorBlob {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint8_t stage = 1;
  std::uint64_t step = 0;
  std::vector<TensorBlob> tensors;
  std::uint32_t queue_filled = 0;
  std::uint32_t queue_dim = 0;
  std::vector<float> queue_rows;  // queue_filled * queue_dim, age order
  std::vector<std::uint8_t> rng_state;

  const TensorBlob* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out;
  serial::put_bytes(out, kCheckpointMagic, 4);
  serial::put_le(out, c.version);
  serial::put_le(out, c.stage);
  serial::put_le(out, c.step);
  serial::put_le(out, std::uint32_t(c.tensors.size()));
  for (const auto& t : c.tensors) {
    serial::put_le(out, std::uint16_t(t.name.size()));
    serial::put_bytes(out, t.name.data(), t.name.size());
    serial::put_le(out, std::uint8_t(t.dims.size()));
    std::uint64_t numel = 1;
    for (std::uint64_t d : t.dims) {
      serial::put_le(out, d);
      numel *= d;
    }
    if (numel != t.data.size())
      throw ShapeError("checkpoint: tensor '" + t.name + "' dims do not match data length");
    for (float v : t.data) serial::put_f32(out, v);
  }
  serial::put_le(out, c.queue_filled);
  serial::put_le(out, c.queue_dim);
  if (std::uint64_t(c.queue_filled) * c.queue_dim != c.queue_rows.size())
    throw ShapeError("checkpoint: queue block size mismatch");
  for (float v : c.queue_rows) serial::put_f32(out, v);
  serial::put_le(out, std::uint32_t(c.rng_state.size()));
  serial::put_bytes(out, c.rng_state.data(), c.rng_state.size());
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& buf) {
  serial::Cursor cur(buf);
  const std::uint8_t* magic = cur.take(4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw serial::ParseError("not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = cur.get_le<std::uint32_t>("version");
  if (c.version != kCheckpointVersion)
    throw serial::ParseError("unsupported checkpoint version " + std::to_string(c.version) +
                             " (expected " + std::to_string(kCheckpointVersion) + ")");
  c.stage = cur.get_le<std::uint8_t>("stage");
  c.step = cur.get_le<std::uint64_t>("step");
  const auto tensor_count = cur.get_le<std::uint32_t>("tensor count");
  c.tensors.resize(tensor_count);
  for (auto& t : c.tensors) {
    const auto name_len = cur.get_le<std::uint16_t>("tensor name length");
    const std::uint8_t* name = cur.take(name_len, "tensor name");
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto rank = cur.get_le<std::uint8_t>("tensor rank");
    t.dims.resize(rank);
    std::uint64_t numel = 1;
    for (auto& d : t.dims) {
      d = cur.get_le<std::uint64_t>("tensor dim");
      numel *= d;
    }
    t.data.resize(numel);
    for (auto& v : t.data) v = cur.get_f32("tensor data");
  }
  c.queue_filled = cur.get_le<std::uint32_t>("queue filled");
  c.queue_dim = cur.get_le<std::uint32_t>("queue dim");
  c.queue_rows.resize(std::size_t(c.queue_filled) * c.queue_dim);
  for (auto& v : c.queue_rows) v = cur.get_f32("queue data");
  const auto rng_len = cur.get_le<std::uint32_t>("rng state length");
  const std::uint8_t* rng = cur.take(rng_len, "rng state");
  c.rng_state.assign(rng, rng + rng_len);
  if (cur.remaining() != 0)
    throw serial::ParseError("checkpoint has " + std::to_string(cur.remaining()) +
                             " trailing bytes");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  serial::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(serial::read_file(path));
}

// parameter set <-> blob conversion

inline TensorBlob blob_from_tensor(const std::string& name, const Tensor<float>& t) {
  TensorBlob b;
  b.name = name;
  for (Index d : t.shape()) b.dims.push_back(std::uint64_t(d));
  b.data.assign(t.data(), t.data() + t.numel());
  return b;
}

inline Tensor<float> tensor_from_blob(const TensorBlob& b, bool requires_grad) {
  Shape shape;
  for (std::uint64_t d : b.dims) shape.push_back(Index(d));
  VecX<float> values(Index(b.data.size()));
  for (std::size_t i = 0; i < b.data.size(); ++i) values[Index(i)] = b.data[i];
  return Tensor<float>::from(std::move(shape), std::move(values), requires_grad);
}

inline void append_param_set(Checkpoint& c, const models::ParamSet<float>& ps,
                             const std::string& prefix = "") {
  for (const auto& [name, t] : ps.items()) c.tensors.push_back(blob_from_tensor(prefix + name, t));
}

// Extracts the tensors under `prefix` into a parameter set, stripping the
// prefix from the names.
inline models::ParamSet<float> param_set_from_checkpoint(const Checkpoint& c,
                                                         const std::string& prefix,
                                                         bool requires_grad) {
  models::ParamSet<float> ps;
  for (const auto& t : c.tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string name = t.name.substr(prefix.size());
    if (prefix.empty() && name.rfind("key.", 0) == 0) continue;  // key copies live apart
    ps.add(name, tensor_from_blob(t, requires_grad));
  }
  return ps;
}

}  // namespace hcl::pipeline
