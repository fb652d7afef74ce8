#pragma once

// Binary checkpoint formats, little-endian throughout.
//
//   BEDC (float model)      BEDQ (quantized model)
//   "BEDC" u16 version=1    "BEDQ" u16 version=1
//   u16 layer_count         u16 layer_count
//   u16 c, h, w (input)     u16 c, h, w (input), i8 input_exp
//   per layer:              per layer:
//     u8 kind, u8 flags       u8 kind, u8 flags
//     u16 in, u16 out         u16 in, u16 out
//     u8 padding              u8 padding, i8 weight_exp, i8 act_exp
//     conv: f32 weights[]     conv: i8 weights[], i32 bias[out]
//           f32 bias[out]
//           bn: f32 gamma[], beta[], mean[], var[], epsilon
//
// flags: bit0 relu, bit1 batchnorm, bit2 wide (BEDQ only).

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bed/error.hpp"
#include "bed/model_ir.hpp"
#include "bed/quantize.hpp"

namespace bed {

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline constexpr std::uint8_t kFlagRelu = 1u << 0;
inline constexpr std::uint8_t kFlagBatchNorm = 1u << 1;
inline constexpr std::uint8_t kFlagWide = 1u << 2;

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void tag(std::string_view magic) {
    for (char c : magic) u8(static_cast<std::uint8_t>(c));
  }
  void count16(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint16_t>::max()) {
      throw Error(Errc::RangeError, std::string(what) + " " + std::to_string(v) + " does not fit u16");
    }
    u16(static_cast<std::uint16_t>(v));
  }

  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (std::uint16_t{u8()} << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  void expect_tag(std::string_view magic) {
    for (char c : magic) {
      if (u8() != static_cast<std::uint8_t>(c)) throw Error(Errc::MalformedCheckpoint, "bad magic, expected " + std::string(magic));
    }
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(Errc::MalformedCheckpoint, "truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

namespace detail {

inline void write_layer_header(ByteWriter& w, const LayerSpec& l, std::uint8_t extra_flags) {
  w.u8(static_cast<std::uint8_t>(l.kind));
  w.u8(static_cast<std::uint8_t>((l.has_relu ? kFlagRelu : 0) | (l.has_batchnorm ? kFlagBatchNorm : 0) | extra_flags));
  w.count16(l.in_channels, "in_channels");
  w.count16(l.out_channels, "out_channels");
  if (l.padding > 255) throw Error(Errc::RangeError, "padding does not fit u8");
  w.u8(static_cast<std::uint8_t>(l.padding));
}

inline LayerSpec read_layer_header(ByteReader& r, std::size_t index, std::uint8_t& flags) {
  LayerSpec l;
  const auto kind = r.u8();
  if (kind > 3) throw Error(Errc::MalformedCheckpoint, "layer " + std::to_string(index) + ": unknown kind " + std::to_string(kind));
  l.kind = static_cast<LayerKind>(kind);
  flags = r.u8();
  l.has_relu = (flags & kFlagRelu) != 0;
  l.has_batchnorm = (flags & kFlagBatchNorm) != 0;
  l.in_channels = r.u16();
  l.out_channels = r.u16();
  l.padding = r.u8();
  return l;
}

inline void write_f32s(ByteWriter& w, const std::vector<float>& v, std::size_t expect, const char* what) {
  if (v.size() != expect) {
    throw Error(Errc::ShapeMismatch, std::string(what) + " has " + std::to_string(v.size()) + " values, expected " + std::to_string(expect));
  }
  for (float x : v) w.f32(x);
}

inline std::vector<float> read_f32s(ByteReader& r, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const ModelGraph& m) {
  ByteWriter w;
  w.tag("BEDC");
  w.u16(kCheckpointVersion);
  w.count16(m.layers.size(), "layer_count");
  w.count16(m.input_shape.channels, "input channels");
  w.count16(m.input_shape.height, "input height");
  w.count16(m.input_shape.width, "input width");
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    detail::write_layer_header(w, l, 0);
    if (!is_conv(l.kind)) continue;
    const auto& p = m.weights.at(i);
    detail::write_f32s(w, p.weights, l.weight_count(), "weights");
    detail::write_f32s(w, p.bias, l.out_channels, "bias");
    if (l.has_batchnorm) {
      if (!p.batchnorm) throw Error(Errc::MissingBNParams, "layer " + std::to_string(i));
      detail::write_f32s(w, p.batchnorm->gamma, l.out_channels, "gamma");
      detail::write_f32s(w, p.batchnorm->beta, l.out_channels, "beta");
      detail::write_f32s(w, p.batchnorm->running_mean, l.out_channels, "running_mean");
      detail::write_f32s(w, p.batchnorm->running_var, l.out_channels, "running_var");
      w.f32(p.batchnorm->epsilon);
    }
  }
  return w.take();
}

inline ModelGraph decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("BEDC");
  if (const auto v = r.u16(); v != kCheckpointVersion) {
    throw Error(Errc::MalformedCheckpoint, "unsupported version " + std::to_string(v));
  }
  const std::size_t count = r.u16();
  ModelGraph m;
  m.input_shape.channels = r.u16();
  m.input_shape.height = r.u16();
  m.input_shape.width = r.u16();
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t flags = 0;
    const LayerSpec l = detail::read_layer_header(r, i, flags);
    LayerWeights p;
    if (is_conv(l.kind)) {
      p.weights = detail::read_f32s(r, l.weight_count());
      p.bias = detail::read_f32s(r, l.out_channels);
      if (l.has_batchnorm) {
        BatchNormParams bn;
        bn.gamma = detail::read_f32s(r, l.out_channels);
        bn.beta = detail::read_f32s(r, l.out_channels);
        bn.running_mean = detail::read_f32s(r, l.out_channels);
        bn.running_var = detail::read_f32s(r, l.out_channels);
        bn.epsilon = r.f32();
        p.batchnorm = std::move(bn);
      }
    }
    m.add(l, std::move(p));
  }
  if (!r.done()) throw Error(Errc::MalformedCheckpoint, "trailing bytes at offset " + std::to_string(r.offset()));
  return m;
}

inline std::vector<std::uint8_t> encode_quantized(const QuantizedModel& m) {
  ByteWriter w;
  w.tag("BEDQ");
  w.u16(kCheckpointVersion);
  w.count16(m.layers.size(), "layer_count");
  w.count16(m.input_shape.channels, "input channels");
  w.count16(m.input_shape.height, "input height");
  w.count16(m.input_shape.width, "input width");
  w.i8(static_cast<std::int8_t>(m.input_exp));
  for (const auto& l : m.layers) {
    detail::write_layer_header(w, l.spec, l.wide ? kFlagWide : 0);
    if (l.weight_exp < -128 || l.weight_exp > 127 || l.act_exp < -128 || l.act_exp > 127) {
      throw Error(Errc::RangeError, "scale exponent does not fit i8");
    }
    w.i8(static_cast<std::int8_t>(l.weight_exp));
    w.i8(static_cast<std::int8_t>(l.act_exp));
    if (l.weights.size() != l.spec.weight_count()) throw Error(Errc::ShapeMismatch, "quantized weight count");
    for (auto q : l.weights) w.i8(q);
    for (auto b : l.bias) w.i32(b);
  }
  return w.take();
}

inline QuantizedModel decode_quantized(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("BEDQ");
  if (const auto v = r.u16(); v != kCheckpointVersion) {
    throw Error(Errc::MalformedCheckpoint, "unsupported version " + std::to_string(v));
  }
  const std::size_t count = r.u16();
  QuantizedModel m;
  m.input_shape.channels = r.u16();
  m.input_shape.height = r.u16();
  m.input_shape.width = r.u16();
  m.input_exp = r.i8();
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t flags = 0;
    QuantizedLayer l;
    l.spec = detail::read_layer_header(r, i, flags);
    l.wide = (flags & kFlagWide) != 0;
    l.weight_exp = r.i8();
    l.act_exp = r.i8();
    l.weights.resize(l.spec.weight_count());
    for (auto& q : l.weights) q = r.i8();
    l.bias.resize(is_conv(l.spec.kind) ? l.spec.out_channels : 0);
    for (auto& b : l.bias) b = r.i32();
    m.layers.push_back(std::move(l));
  }
  if (!r.done()) throw Error(Errc::MalformedCheckpoint, "trailing bytes at offset " + std::to_string(r.offset()));
  return m;
}

/// Human-diffable rendering of a float checkpoint; floats printed with
/// enough digits to round-trip.
inline std::string checkpoint_manifest(const ModelGraph& m) {
  std::string out = "BEDC v" + std::to_string(kCheckpointVersion) + "\n";
  out += "input " + std::to_string(m.input_shape.channels) + " " + std::to_string(m.input_shape.height) + " " +
         std::to_string(m.input_shape.width) + "\n";
  auto floats = [&out](std::string_view name, const std::vector<float>& v) {
    out += "  ";
    out += name;
    char buf[32];
    for (float x : v) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
      out += buf;
    }
    out += "\n";
  };
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    out += "layer " + std::to_string(i) + " " + kind_name(l.kind) + " in=" + std::to_string(l.in_channels) +
           " out=" + std::to_string(l.out_channels) + " pad=" + std::to_string(l.padding) +
           " relu=" + std::to_string(l.has_relu ? 1 : 0) + " bn=" + std::to_string(l.has_batchnorm ? 1 : 0) + "\n";
    if (!is_conv(l.kind) || i >= m.weights.size()) continue;
    const auto& p = m.weights[i];
    floats("weights", p.weights);
    floats("bias", p.bias);
    if (p.batchnorm) {
      floats("gamma", p.batchnorm->gamma);
      floats("beta", p.batchnorm->beta);
      floats("running_mean", p.batchnorm->running_mean);
      floats("running_var", p.batchnorm->running_var);
      floats("epsilon", {p.batchnorm->epsilon});
    }
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelGraph& m) {
  write_file(path, encode_checkpoint(m));
}
inline ModelGraph load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

inline void save_quantized(const std::filesystem::path& path, const QuantizedModel& m) {
  write_file(path, encode_quantized(m));
}
inline QuantizedModel load_quantized(const std::filesystem::path& path) { return decode_quantized(read_file(path)); }

}  // namespace bed
