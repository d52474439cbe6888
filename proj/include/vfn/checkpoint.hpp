#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/features.hpp"
#include "vfn/ranker.hpp"

namespace vfn {

// Binary layout (all integers little-endian):
//   "VFNC" | u32 version | u32 spec_len | spec TLVs | u64 iteration |
//   f64 validation_loss | u32 tensor_count | tensors | u32 crc32
// A spec TLV is u32 tag, u32 payload_len, payload. A tensor is u32 name_len,
// name, u32 rank, u32 dims[rank], f32 values. The CRC covers every byte
// before it.
inline constexpr char kCheckpointMagic[4] = {'V', 'F', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  NetworkSpec spec;
  ParamSet<float> weights;
  std::uint64_t iteration = 0;
  double validation_loss = 0.0;

  RankerParams<float> params() const { return {spec, weights, weights.zeros_like()}; }
};

namespace detail {

enum SpecTag : std::uint32_t {
  kTagBackboneKind = 1,
  kTagInputSide = 2,
  kTagInputChannels = 3,
  kTagLayer = 4,
  kTagPooling = 5,
  kTagSppSizes = 6,
};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void tlv(std::uint32_t tag, const ByteWriter& payload) {
    u32(tag);
    u32(static_cast<std::uint32_t>(payload.size()));
    raw(payload.bytes_.data(), payload.size());
  }
  std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw FormatError("checkpoint: truncated data");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter spec;
  const BackboneSpec& bb = ck.spec.backbone;
  {
    detail::ByteWriter p;
    p.u8(static_cast<std::uint8_t>(bb.kind));
    spec.tlv(detail::kTagBackboneKind, p);
  }
  {
    detail::ByteWriter p;
    p.u32(static_cast<std::uint32_t>(bb.input_side));
    spec.tlv(detail::kTagInputSide, p);
  }
  {
    detail::ByteWriter p;
    p.u32(static_cast<std::uint32_t>(bb.input_channels));
    spec.tlv(detail::kTagInputChannels, p);
  }
  for (const LayerSpec& l : bb.layers) {
    detail::ByteWriter p;
    p.u8(static_cast<std::uint8_t>(l.type));
    p.u32(static_cast<std::uint32_t>(l.out_channels));
    p.u32(static_cast<std::uint32_t>(l.kernel));
    p.u32(static_cast<std::uint32_t>(l.stride));
    p.u32(static_cast<std::uint32_t>(l.pad));
    spec.tlv(detail::kTagLayer, p);
  }
  {
    detail::ByteWriter p;
    p.u8(static_cast<std::uint8_t>(ck.spec.pooling));
    spec.tlv(detail::kTagPooling, p);
  }
  {
    detail::ByteWriter p;
    p.u32(static_cast<std::uint32_t>(ck.spec.spp_sizes.size()));
    for (int k : ck.spec.spp_sizes) p.u32(static_cast<std::uint32_t>(k));
    spec.tlv(detail::kTagSppSizes, p);
  }

  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(ck.version);
  w.u32(static_cast<std::uint32_t>(spec.size()));
  w.raw(spec.bytes().data(), spec.size());
  w.u64(ck.iteration);
  w.f64(ck.validation_loss);
  const auto tensors = ck.weights.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor<float>* t : tensors) {
    w.u32(static_cast<std::uint32_t>(t->name.size()));
    w.raw(t->name.data(), t->name.size());
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t->values) w.f32(v);
  }
  w.u32(detail::crc32_of(w.bytes().data(), w.size()));
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  detail::ByteReader head(bytes.data() + 4, 4);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  detail::ByteReader tail(bytes.data() + bytes.size() - 4, 4);
  if (tail.u32() != detail::crc32_of(bytes.data(), bytes.size() - 4))
    throw FormatError("checkpoint: checksum mismatch");

  detail::ByteReader r(bytes.data() + 8, bytes.size() - 12);
  Checkpoint ck;
  ck.version = version;
  NetworkSpec spec;
  spec.backbone.layers.clear();
  spec.spp_sizes.clear();
  {
    const std::uint32_t spec_len = r.u32();
    detail::ByteReader s(r.take(spec_len), spec_len);
    while (!s.done()) {
      const std::uint32_t tag = s.u32();
      const std::uint32_t len = s.u32();
      detail::ByteReader p(s.take(len), len);
      switch (tag) {
        case detail::kTagBackboneKind: {
          const auto k = p.u8();
          if (k > 1) throw FormatError("checkpoint: unknown backbone kind");
          spec.backbone.kind = static_cast<BackboneKind>(k);
          break;
        }
        case detail::kTagInputSide: spec.backbone.input_side = static_cast<int>(p.u32()); break;
        case detail::kTagInputChannels: spec.backbone.input_channels = static_cast<int>(p.u32()); break;
        case detail::kTagLayer: {
          LayerSpec l;
          const auto type = p.u8();
          if (type > 2) throw FormatError("checkpoint: unknown layer type");
          l.type = static_cast<LayerType>(type);
          l.out_channels = static_cast<int>(p.u32());
          l.kernel = static_cast<int>(p.u32());
          l.stride = static_cast<int>(p.u32());
          l.pad = static_cast<int>(p.u32());
          spec.backbone.layers.push_back(l);
          break;
        }
        case detail::kTagPooling: {
          const auto m = p.u8();
          if (m > 2) throw FormatError("checkpoint: unknown pooling mode");
          spec.pooling = static_cast<Pooling>(m);
          break;
        }
        case detail::kTagSppSizes: {
          const std::uint32_t count = p.u32();
          for (std::uint32_t i = 0; i < count; ++i) spec.spp_sizes.push_back(static_cast<int>(p.u32()));
          break;
        }
        default: throw FormatError("checkpoint: unknown spec tag " + std::to_string(tag));
      }
      if (!p.done()) throw FormatError("checkpoint: malformed spec entry");
    }
  }
  try {
    ck.weights = shaped_params<float>(spec);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid network spec: ") + e.what());
  }
  ck.spec = spec;
  ck.iteration = r.u64();
  ck.validation_loss = r.f64();

  auto tensors = ck.weights.tensors();
  if (r.u32() != tensors.size()) throw FormatError("checkpoint: tensor count mismatch");
  for (Tensor<float>* t : tensors) {
    const std::uint32_t name_len = r.u32();
    const auto* name = r.take(name_len);
    if (std::string(reinterpret_cast<const char*>(name), name_len) != t->name)
      throw FormatError("checkpoint: expected tensor " + t->name);
    const std::uint32_t rank = r.u32();
    if (rank != t->shape.size()) throw FormatError("checkpoint: rank mismatch for " + t->name);
    for (int d : t->shape)
      if (r.u32() != static_cast<std::uint32_t>(d)) throw FormatError("checkpoint: shape mismatch for " + t->name);
    for (float& v : t->values) v = r.f32();
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace vfn
