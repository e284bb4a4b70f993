#pragma once

#include <json.hpp>

#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "triplab/hash.hpp"
#include "triplab/model.hpp"
#include "triplab/tensor.hpp"

namespace triplab {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Binary model container. Layout (all integers little-endian):
///   "TRIPCKPT" magic, u32 format version, u64 metadata length, metadata
///   (JSON, sorted keys), u32 tensor count, then per tensor: u32 name length,
///   name, u8 dtype (0 = f32), u32 rank, u32 dims[rank], u64 data bytes, data.
/// Serialization is byte-deterministic for identical contents.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "TRIPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  const std::string meta = ckpt.meta.dump();
  detail::put_u64(out, meta.size());
  out += meta;
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(0);  // dtype f32
    detail::put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int d = 0; d < tensor.rank(); ++d) detail::put_u32(out, static_cast<std::uint32_t>(tensor.dim(d)));
    const std::uint64_t nbytes = static_cast<std::uint64_t>(tensor.size()) * sizeof(float);
    detail::put_u64(out, nbytes);
    out.append(reinterpret_cast<const char*>(tensor.data()), nbytes);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  detail::ByteReader r{buf};
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const std::uint64_t meta_len = r.u64();
  const std::string meta = r.bytes(meta_len);
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const std::uint8_t dtype = r.u8();
    if (dtype != 0) throw CheckpointError("unsupported tensor dtype in checkpoint");
    const std::uint32_t rank = r.u32();
    if (rank > 4) throw CheckpointError("checkpoint tensor rank too large");
    std::vector<int> shape;
    std::int64_t elems = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      shape.push_back(static_cast<int>(dim));
      elems *= dim;
    }
    const std::uint64_t nbytes = r.u64();
    if (nbytes != static_cast<std::uint64_t>(elems) * sizeof(float))
      throw CheckpointError("checkpoint tensor size mismatch for '" + name + "'");
    Tensor<float> t(shape);
    const std::string data = r.bytes(nbytes);
    std::memcpy(t.data(), data.data(), nbytes);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

/// Append every parameter tensor, converted to f32, in param_refs order.
template <typename P>
void pack_params(const P& params, Checkpoint& ckpt) {
  auto refs = param_refs(const_cast<P&>(params));
  for (const auto& r : refs) ckpt.tensors.emplace_back(r.name, r.tensor->template cast<float>());
}

/// Restore parameters by name; shapes must match the initialized model.
template <typename P>
void unpack_params(const Checkpoint& ckpt, P& params) {
  auto refs = param_refs(params);
  for (auto& r : refs) {
    const Tensor<float>* t = ckpt.find(r.name);
    if (!t) throw CheckpointError("checkpoint missing tensor '" + r.name + "'");
    if (t->shape() != r.tensor->shape())
      throw CheckpointError("checkpoint tensor '" + r.name + "' has shape " + shape_string(t->shape()) +
                            ", model expects " + shape_string(r.tensor->shape()));
    using T = std::decay_t<decltype((*r.tensor)[0])>;
    for (std::int64_t i = 0; i < t->size(); ++i) (*r.tensor)[i] = static_cast<T>((*t)[i]);
  }
}

}  // namespace triplab
