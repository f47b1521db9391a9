#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/flo_io.hpp"
#include "u2flow/params.hpp"

// Checkpoint container, little-endian:
//   bytes "U2CK", u32 version,
//   u32 meta_count, meta_count x { u32 klen, key, u32 vlen, value },
//   u32 tensor_count, tensor_count x { u32 nlen, name, u32 rank,
//                                      i32 dims[rank], f32 payload }.
// Meta keys are written sorted and tensors in store order, so saving the
// same state twice produces identical bytes.

namespace u2flow {

struct Checkpoint {
  ParamStore params;
  std::map<std::string, std::string> meta;
};

namespace detail {

constexpr char kCkptMagic[4] = {'U', '2', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

inline void put_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_str(std::ofstream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct ByteReader {
  const std::vector<char>& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw FormatError("checkpoint truncated: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  std::string str() {
    const uint32_t n = u32();
    if (n > (1u << 20)) throw FormatError("checkpoint string too long: " + path);
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::map<std::string, std::string>& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for write: " + path);
  out.write(detail::kCkptMagic, 4);
  detail::put_u32(out, detail::kCkptVersion);
  detail::put_u32(out, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    detail::put_str(out, k);
    detail::put_str(out, v);
  }
  detail::put_u32(out, static_cast<uint32_t>(params.entries.size()));
  for (const auto& e : params.entries) {
    detail::put_str(out, e.name);
    detail::put_u32(out, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) detail::put_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
  if (!out) throw FormatError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r{buf, 0, path};
  r.need(4);
  if (std::memcmp(buf.data(), detail::kCkptMagic, 4) != 0)
    throw FormatError("bad checkpoint magic: " + path);
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw FormatError("unsupported checkpoint version: " + path);
  Checkpoint ck;
  const uint32_t nmeta = r.u32();
  if (nmeta > (1u << 16)) throw FormatError("meta count implausible: " + path);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    ck.meta[k] = v;
  }
  const uint32_t ntensors = r.u32();
  if (ntensors > (1u << 20))
    throw FormatError("tensor count implausible: " + path);
  for (uint32_t i = 0; i < ntensors; ++i) {
    std::string name = r.str();
    const uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("tensor rank implausible: " + path);
    Shape shape;
    int64_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const int32_t dim = r.i32();
      if (dim <= 0 || dim > (1 << 24))
        throw FormatError("tensor dim implausible: " + path);
      shape.push_back(dim);
      count *= dim;
    }
    if (count > (1ll << 28))
      throw FormatError("tensor payload implausible: " + path);
    r.need(static_cast<size_t>(count) * sizeof(float));
    std::vector<float> data(static_cast<size_t>(count));
    std::memcpy(data.data(), buf.data() + r.pos, data.size() * sizeof(float));
    r.pos += data.size() * sizeof(float);
    if (ck.params.has(name))
      throw FormatError("duplicate tensor name: " + path);
    ck.params.add(name, std::move(shape), std::move(data));
  }
  if (r.pos != buf.size())
    throw FormatError("trailing bytes in checkpoint: " + path);
  return ck;
}

}  // namespace u2flow
