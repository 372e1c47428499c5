#pragma once

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"
#include "lumafuse/random.hpp"
#include "lumafuse/tensor.hpp"

static_assert(std::endian::native == std::endian::little, "NNW1/EMB1 I/O assumes a little-endian host");

namespace lumafuse {

struct LayerSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

// Expected tensors of an architecture, in file order.
struct ArchSpec {
  std::string id;
  std::vector<LayerSpec> layers;
};

inline constexpr std::size_t kEncoderOutputs = 6;
inline constexpr std::size_t kDetailWidth = 32;
inline constexpr std::size_t kDetailBlocks = 3;

inline const std::vector<std::size_t>& encoder_channels() {
  static const std::vector<std::size_t> c = {3, 8, 16, 32, 64, 128};
  return c;
}

inline const ArchSpec& encoder_arch() {
  static const ArchSpec spec = [] {
    ArchSpec s{"encoder", {}};
    const auto& ch = encoder_channels();
    for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
      const std::string p = "encoder.conv" + std::to_string(i + 1);
      s.layers.push_back({p + ".weight", {ch[i + 1], ch[i], 3, 3}});
      s.layers.push_back({p + ".bias", {ch[i + 1]}});
    }
    s.layers.push_back({"encoder.fc.weight", {kEncoderOutputs, ch.back()}});
    s.layers.push_back({"encoder.fc.bias", {kEncoderOutputs}});
    return s;
  }();
  return spec;
}

inline void append_conv_bn(ArchSpec& s, const std::string& conv, const std::string& bn,
                           std::size_t in, std::size_t out) {
  s.layers.push_back({conv + ".weight", {out, in, 3, 3}});
  s.layers.push_back({conv + ".bias", {out}});
  if (bn.empty()) return;
  for (const char* field : {".gamma", ".beta", ".mean", ".var"}) {
    s.layers.push_back({bn + field, {out}});
  }
}

inline const ArchSpec& detail_arch() {
  static const ArchSpec spec = [] {
    ArchSpec s{"detail", {}};
    append_conv_bn(s, "detail.conv_in", "detail.bn_in", 3, kDetailWidth);
    for (std::size_t b = 1; b <= kDetailBlocks; ++b) {
      const std::string p = "detail.block" + std::to_string(b);
      append_conv_bn(s, p + ".conv1", p + ".bn1", kDetailWidth, kDetailWidth);
      append_conv_bn(s, p + ".conv2", p + ".bn2", kDetailWidth, kDetailWidth);
    }
    append_conv_bn(s, "detail.conv_out", "", kDetailWidth, 3);
    return s;
  }();
  return spec;
}

inline const ArchSpec& arch_by_id(const std::string& id) {
  if (id == encoder_arch().id) return encoder_arch();
  if (id == detail_arch().id) return detail_arch();
  throw ShapeError("unknown architecture '" + id + "'");
}

// Named tensors of one architecture. Read-only once constructed.
class WeightStore {
public:
  WeightStore() = default;

  // Validates that `tensors` holds exactly the layers of `arch`.
  WeightStore(std::string arch, std::map<std::string, Tensor> tensors)
      : arch_(std::move(arch)), tensors_(std::move(tensors)) {
    const ArchSpec& spec = arch_by_id(arch_);
    for (const LayerSpec& l : spec.layers) {
      const auto it = tensors_.find(l.name);
      if (it == tensors_.end()) throw ShapeError(arch_ + ": missing layer " + l.name);
      if (it->second.shape() != l.shape) {
        throw ShapeError(arch_ + ": layer " + l.name + " has shape " + it->second.shape_string() +
                         ", expected " + Tensor(l.shape).shape_string());
      }
    }
    if (tensors_.size() != spec.layers.size()) {
      for (const auto& [name, t] : tensors_) {
        bool known = false;
        for (const LayerSpec& l : spec.layers) known = known || l.name == name;
        if (!known) throw ShapeError(arch_ + ": unexpected layer " + name);
      }
    }
  }

  const std::string& arch() const noexcept { return arch_; }

  const Tensor& at(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError(arch_ + ": no layer " + name);
    return it->second;
  }

  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }

  bool operator==(const WeightStore&) const = default;

private:
  std::string arch_;
  std::map<std::string, Tensor> tensors_;
};

// ---------------------------------------------------------------------------
// NNW1 container
//
//   "NNW1" | u32 count | count x { u16 name_len | name | u8 rank |
//   rank x u32 dim | f32 data } | u32 crc32(all preceding bytes)
//
// All integers and floats little-endian. Layers are written in architecture
// order. The architecture is identified by the common name prefix.
// ---------------------------------------------------------------------------

inline constexpr char kWeightMagic[4] = {'N', 'N', 'W', '1'};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  Bytes out;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw FormatError(std::string("truncated ") + what, pos_);
    }
  }

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Bytes save_weights(const WeightStore& ws) {
  const ArchSpec& spec = arch_by_id(ws.arch());
  detail::ByteWriter w;
  w.put_bytes(kWeightMagic, 4);
  w.put(static_cast<std::uint32_t>(spec.layers.size()));
  for (const LayerSpec& l : spec.layers) {
    const Tensor& t = ws.at(l.name);
    w.put(static_cast<std::uint16_t>(l.name.size()));
    w.put_bytes(l.name.data(), l.name.size());
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_bytes(t.data(), t.size() * sizeof(float));
  }
  w.put(crc32_of(w.out));
  return std::move(w.out);
}

inline WeightStore load_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    throw FormatError("bad weight file magic, expected NNW1", 0);
  }
  if (bytes.size() < 12) throw FormatError("truncated weight file", bytes.size());
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored_crc) throw FormatError("weight file CRC32 mismatch", body.size());

  detail::ByteReader rd(body);
  rd.take(4, "magic");
  const auto count = rd.get<std::uint32_t>("layer count");
  std::map<std::string, Tensor> tensors;
  std::string prefix;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t layer_at = rd.pos();
    const auto name_len = rd.get<std::uint16_t>("layer name length");
    const auto name_bytes = rd.take(name_len, "layer name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = rd.get<std::uint8_t>("rank");
    std::vector<std::size_t> shape(rank);
    std::size_t elements = 1;
    for (auto& d : shape) {
      d = rd.get<std::uint32_t>("dimension");
      if (d != 0 && elements > rd.remaining() / d) throw FormatError("layer " + name + " larger than file", layer_at);
      elements *= d;
    }
    if (elements > rd.remaining() / sizeof(float)) {
      throw FormatError("truncated data for layer " + name, rd.pos());
    }
    const auto raw = rd.take(elements * sizeof(float), "layer data");
    std::vector<float> data(elements);
    std::memcpy(data.data(), raw.data(), raw.size());
    for (float v : data) {
      if (!std::isfinite(v)) throw FormatError("non-finite value in layer " + name, layer_at);
    }

    const std::string layer_prefix = name.substr(0, name.find('.'));
    if (i == 0) prefix = layer_prefix;
    if (layer_prefix != prefix) {
      throw ShapeError("layer " + name + " does not belong to architecture '" + prefix + "'");
    }
    if (!tensors.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate layer " + name, layer_at);
    }
  }
  if (rd.remaining() != 0) throw FormatError("trailing bytes before CRC", rd.pos());
  if (count == 0) throw ShapeError("weight file declares no layers");
  return WeightStore(prefix, std::move(tensors));
}

inline WeightStore read_weights_file(const std::string& path) { return load_weights(read_file(path)); }

// All-zero tensors for an architecture. Batch-norm variances are zero too.
inline WeightStore zero_weights(const ArchSpec& spec) {
  std::map<std::string, Tensor> t;
  for (const LayerSpec& l : spec.layers) t.emplace(l.name, Tensor(l.shape));
  return WeightStore(spec.id, std::move(t));
}

// Seeded initialization: uniform fan-in scaled conv/fc weights, small biases,
// batch-norm statistics near the identity. The last detail conv is scaled
// down so the residual stays a modest correction.
inline WeightStore random_weights(const ArchSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, Tensor> t;
  for (const LayerSpec& l : spec.layers) {
    Tensor x(l.shape);
    const auto ends_with = [&](const char* suffix) {
      const std::size_t n = std::strlen(suffix);
      return l.name.size() >= n && l.name.compare(l.name.size() - n, n, suffix) == 0;
    };
    double lo = -0.05, hi = 0.05;
    if (ends_with(".weight")) {
      const std::size_t fan_in = Tensor::element_count(l.shape) / l.shape[0];
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      if (l.name == "detail.conv_out.weight") bound *= 0.1;
      if (l.name == "encoder.fc.weight") bound *= 0.5;
      lo = -bound;
      hi = bound;
    } else if (ends_with(".gamma")) {
      lo = 0.8, hi = 1.2;
    } else if (ends_with(".var")) {
      lo = 0.5, hi = 1.5;
    } else if (ends_with(".mean") || ends_with(".beta")) {
      lo = -0.1, hi = 0.1;
    }
    for (float& v : x.values()) v = static_cast<float>(rng.uniform(lo, hi));
    t.emplace(l.name, std::move(x));
  }
  return WeightStore(spec.id, std::move(t));
}

}  // namespace lumafuse
