#pragma once

// C header synthesis for a quantized model.
//
// Grammar of every emitted file (LF endings, trailing newline):
//   - `#define NAME VALUE` macro lines with base-10 integer values
//   - arrays `static const <type> ident[] = {` followed by value lines of
//     at most 12 comma-separated base-10 values (two-space indent, ", "
//     separator, trailing "," on all but the last line) and a closing `};`
//   - include guards, `#include "..."` lines, `//` comments and blank lines
//
// Files: <name>_config.h (layer count, input/output dims and exponents),
// <name>_l<i>.h per layer (macros, plus weights/bias arrays for convs) and
// manifest.txt with one `file: bytes` line per header.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bed/checkpoint.hpp"
#include "bed/error.hpp"
#include "bed/inference.hpp"
#include "bed/model_ir.hpp"
#include "bed/quantize.hpp"

namespace bed {

inline constexpr std::size_t kValuesPerLine = 12;
inline constexpr std::string_view kManifestName = "manifest.txt";

struct GeneratedFile {
  std::string name;
  std::string text;
  friend bool operator==(const GeneratedFile&, const GeneratedFile&) = default;
};

struct SynthBundle {
  std::vector<GeneratedFile> files;
  std::string manifest;

  std::size_t total_bytes() const {
    std::size_t n = 0;
    for (const auto& f : files) n += f.text.size();
    return n;
  }

  const GeneratedFile* find(std::string_view name) const {
    for (const auto& f : files) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }

  friend bool operator==(const SynthBundle&, const SynthBundle&) = default;
};

inline bool is_valid_identifier(std::string_view s) {
  if (s.empty() || !(s[0] >= 'a' && s[0] <= 'z')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; });
}

namespace detail {

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline void render_macro(std::string& out, const std::string& name, long long value) {
  out += "#define " + name + " " + std::to_string(value) + "\n";
}

template <typename T>
void render_array(std::string& out, std::string_view type, const std::string& ident, const std::vector<T>& values) {
  out += "static const ";
  out += type;
  out += " " + ident + "[] = {\n";
  for (std::size_t i = 0; i < values.size(); i += kValuesPerLine) {
    out += "  ";
    const auto end = std::min(values.size(), i + kValuesPerLine);
    for (std::size_t j = i; j < end; ++j) {
      out += std::to_string(static_cast<long long>(values[j]));
      if (j + 1 < end) out += ", ";
    }
    if (end < values.size()) out += ",";
    out += "\n";
  }
  out += "};\n";
}

inline std::uint8_t layer_flags(const QuantizedLayer& l) {
  return static_cast<std::uint8_t>((l.spec.has_relu ? kFlagRelu : 0) | (l.spec.has_batchnorm ? kFlagBatchNorm : 0) |
                                   (l.wide ? kFlagWide : 0));
}

inline void require_identifier(std::string_view name) {
  if (!is_valid_identifier(name)) {
    throw Error(Errc::InvalidIdentifier, "'" + std::string(name) + "' must match [a-z][a-z0-9_]*");
  }
}

}  // namespace detail

inline std::string layer_header_name(std::string_view model, std::size_t i) {
  return std::string(model) + "_l" + std::to_string(i) + ".h";
}
inline std::string config_header_name(std::string_view model) { return std::string(model) + "_config.h"; }

inline SynthBundle emit_headers(const QuantizedModel& q, std::string_view name) {
  detail::require_identifier(name);
  validate_quantized(q);
  const std::string up = detail::upper(name);
  const std::string lo(name);
  SynthBundle bundle;

  std::string cfg;
  cfg += "// " + lo + " model configuration\n";
  cfg += "#ifndef " + up + "_CONFIG_H\n#define " + up + "_CONFIG_H\n\n";
  const Shape out_shape = output_shape(q.graph());
  detail::render_macro(cfg, up + "_LAYER_COUNT", static_cast<long long>(q.layers.size()));
  detail::render_macro(cfg, up + "_INPUT_C", static_cast<long long>(q.input_shape.channels));
  detail::render_macro(cfg, up + "_INPUT_H", static_cast<long long>(q.input_shape.height));
  detail::render_macro(cfg, up + "_INPUT_W", static_cast<long long>(q.input_shape.width));
  detail::render_macro(cfg, up + "_INPUT_EXP", q.input_exp);
  detail::render_macro(cfg, up + "_OUTPUT_C", static_cast<long long>(out_shape.channels));
  detail::render_macro(cfg, up + "_OUTPUT_H", static_cast<long long>(out_shape.height));
  detail::render_macro(cfg, up + "_OUTPUT_W", static_cast<long long>(out_shape.width));
  detail::render_macro(cfg, up + "_OUTPUT_EXP", q.output_exp());
  detail::render_macro(cfg, up + "_LAST_LAYER_WIDE", q.last_layer_wide() ? 1 : 0);
  if (!q.layers.empty()) cfg += "\n";
  for (std::size_t i = 0; i < q.layers.size(); ++i) cfg += "#include \"" + layer_header_name(lo, i) + "\"\n";
  cfg += "\n#endif\n";
  bundle.files.push_back({config_header_name(lo), std::move(cfg)});

  for (std::size_t i = 0; i < q.layers.size(); ++i) {
    const auto& l = q.layers[i];
    const std::string mu = up + "_L" + std::to_string(i);
    const std::string ml = lo + "_l" + std::to_string(i);
    std::string h;
    h += "// " + lo + " layer " + std::to_string(i) + ": " + kind_name(l.spec.kind) + " " +
         std::to_string(l.spec.in_channels) + "->" + std::to_string(l.spec.out_channels) + "\n";
    h += "#ifndef " + mu + "_H\n#define " + mu + "_H\n\n";
    detail::render_macro(h, mu + "_KIND", static_cast<long long>(l.spec.kind));
    detail::render_macro(h, mu + "_IN", static_cast<long long>(l.spec.in_channels));
    detail::render_macro(h, mu + "_OUT", static_cast<long long>(l.spec.out_channels));
    detail::render_macro(h, mu + "_PAD", static_cast<long long>(l.spec.padding));
    detail::render_macro(h, mu + "_W_EXP", l.weight_exp);
    detail::render_macro(h, mu + "_ACT_EXP", l.act_exp);
    detail::render_macro(h, mu + "_FLAGS", detail::layer_flags(l));
    if (is_conv(l.spec.kind)) {
      h += "\n";
      detail::render_array(h, "signed char", ml + "_weights", l.weights);
      h += "\n";
      detail::render_array(h, "long", ml + "_bias", l.bias);
    }
    h += "\n#endif\n";
    bundle.files.push_back({layer_header_name(lo, i), std::move(h)});
  }

  for (const auto& f : bundle.files) bundle.manifest += f.name + ": " + std::to_string(f.text.size()) + "\n";
  return bundle;
}

inline void write_bundle(const SynthBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& f : b.files) write_file(dir / f.name, f.text);
  write_file(dir / std::string(kManifestName), b.manifest);
}

inline SynthBundle read_bundle(const std::filesystem::path& dir) {
  SynthBundle b;
  const auto raw = read_file(dir / std::string(kManifestName));
  b.manifest.assign(raw.begin(), raw.end());
  std::istringstream in(b.manifest);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) {
      throw Error(Errc::ParseError, std::string(kManifestName) + ":" + std::to_string(lineno) + ":1: expected 'file: bytes'");
    }
    const auto name = line.substr(0, colon);
    const auto bytes = read_file(dir / name);
    b.files.push_back({name, std::string(bytes.begin(), bytes.end())});
  }
  return b;
}

namespace detail {

/// Strict reader for the emission grammar above.
class HeaderParser {
 public:
  HeaderParser(std::string file, std::string_view text) : file_(std::move(file)) {
    std::size_t start = 0;
    while (start < text.size()) {
      auto nl = text.find('\n', start);
      if (nl == std::string_view::npos) nl = text.size();
      lines_.emplace_back(text.substr(start, nl - start));
      start = nl + 1;
    }
    parse();
  }

  long long macro(const std::string& name) const {
    auto it = macros_.find(name);
    if (it == macros_.end()) throw Error(Errc::ParseError, file_ + ": missing macro " + name);
    return it->second;
  }

  bool has_array(const std::string& ident) const { return arrays_.count(ident) != 0; }

  /// Values of an array, range-checked against [lo, hi].
  std::vector<long long> array(const std::string& ident, long long lo, long long hi) const {
    auto it = arrays_.find(ident);
    if (it == arrays_.end()) throw Error(Errc::ParseError, file_ + ": missing array " + ident);
    std::vector<long long> out;
    for (const auto& v : it->second) {
      if (v.value < lo || v.value > hi) {
        throw Error(Errc::RangeError, where(v.line, v.col) + "value " + std::to_string(v.value) + " of " + ident +
                                          " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      }
      out.push_back(v.value);
    }
    return out;
  }

 private:
  struct Value {
    long long value;
    std::size_t line, col;
  };

  std::string where(std::size_t line, std::size_t col) const {
    return file_ + ":" + std::to_string(line + 1) + ":" + std::to_string(col + 1) + ": ";
  }

  [[noreturn]] void fail(std::size_t line, std::size_t col, const std::string& msg) const {
    throw Error(Errc::ParseError, where(line, col) + msg);
  }

  static bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

  long long parse_int(std::string_view tok, std::size_t line, std::size_t col) const {
    long long v = 0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    if (tok.empty() || (tok[0] != '-' && !std::isdigit(static_cast<unsigned char>(tok[0])))) {
      fail(line, col, "expected integer, got '" + std::string(tok) + "'");
    }
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec == std::errc::result_out_of_range) throw Error(Errc::RangeError, where(line, col) + "integer out of range");
    if (ec != std::errc() || p != last) fail(line, col, "expected integer, got '" + std::string(tok) + "'");
    return v;
  }

  static bool is_ident(std::string_view s) {
    if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
  }

  void parse() {
    for (std::size_t i = 0; i < lines_.size(); ++i) {
      const std::string_view line = lines_[i];
      if (line.empty() || starts_with(line, "//") || starts_with(line, "#ifndef ") || line == "#endif" ||
          starts_with(line, "#include \"")) {
        continue;
      }
      if (starts_with(line, "#define ")) {
        const auto rest = line.substr(8);
        const auto sp = rest.find(' ');
        if (sp == std::string_view::npos) {
          // Include guards carry no value.
          if (!is_ident(rest)) fail(i, 8, "bad macro name");
          continue;
        }
        const auto name = rest.substr(0, sp);
        if (!is_ident(name)) fail(i, 8, "bad macro name");
        macros_[std::string(name)] = parse_int(rest.substr(sp + 1), i, 8 + sp + 1);
        continue;
      }
      if (starts_with(line, "static const ")) {
        i = parse_array(i);
        continue;
      }
      fail(i, 0, "unexpected line '" + std::string(line) + "'");
    }
  }

  std::size_t parse_array(std::size_t i) {
    const std::string_view line = lines_[i];
    std::string_view rest = line.substr(13);
    std::size_t type_len = 0;
    if (starts_with(rest, "signed char ")) {
      type_len = 12;
    } else if (starts_with(rest, "long ")) {
      type_len = 5;
    } else {
      fail(i, 13, "unsupported array type");
    }
    rest = rest.substr(type_len);
    const auto br = rest.find("[] = {");
    if (br == std::string_view::npos || br + 6 != rest.size()) fail(i, 13 + type_len, "expected 'ident[] = {'");
    const std::string ident(rest.substr(0, br));
    if (!is_ident(ident)) fail(i, 13 + type_len, "bad array name");
    auto& values = arrays_[ident];
    for (std::size_t j = i + 1; j < lines_.size(); ++j) {
      const std::string_view l = lines_[j];
      if (l == "};") return j;
      if (!starts_with(l, "  ")) fail(j, 0, "expected indented values or '};'");
      std::size_t pos = 2;
      while (pos < l.size()) {
        auto end = l.find(',', pos);
        const bool last = end == std::string_view::npos;
        if (last) end = l.size();
        values.push_back({parse_int(l.substr(pos, end - pos), j, pos), j, pos});
        if (last) break;
        pos = end + 1;
        if (pos < l.size()) {
          if (l[pos] != ' ') fail(j, pos, "expected ' ' after ','");
          ++pos;
        }
      }
    }
    fail(lines_.size() - 1, 0, "unterminated array " + ident);
  }

  std::string file_;
  std::vector<std::string> lines_;
  std::map<std::string, long long> macros_;
  std::map<std::string, std::vector<Value>> arrays_;
};

inline std::string config_prefix(const SynthBundle& b) {
  std::optional<std::string> prefix;
  for (const auto& f : b.files) {
    constexpr std::string_view suffix = "_config.h";
    if (f.name.size() > suffix.size() && f.name.ends_with(suffix)) {
      if (prefix) throw Error(Errc::ParseError, "bundle has more than one config header");
      prefix = f.name.substr(0, f.name.size() - suffix.size());
    }
  }
  if (!prefix) throw Error(Errc::ParseError, "bundle has no config header");
  return *prefix;
}

inline int to_int(long long v, const std::string& what) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw Error(Errc::RangeError, what + " out of range");
  }
  return static_cast<int>(v);
}

inline std::size_t to_count(long long v, const std::string& what) {
  if (v < 0 || v > 65535) throw Error(Errc::RangeError, what + " out of range");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Rebuilds the quantized model from an emitted bundle.
inline QuantizedModel parse_headers(const SynthBundle& bundle) {
  const std::string lo = detail::config_prefix(bundle);
  const std::string up = detail::upper(lo);
  const auto* cfg_file = bundle.find(config_header_name(lo));
  detail::HeaderParser cfg(cfg_file->name, cfg_file->text);

  QuantizedModel q;
  const auto count = detail::to_count(cfg.macro(up + "_LAYER_COUNT"), "layer count");
  q.input_shape = {detail::to_count(cfg.macro(up + "_INPUT_C"), "input C"),
                   detail::to_count(cfg.macro(up + "_INPUT_H"), "input H"),
                   detail::to_count(cfg.macro(up + "_INPUT_W"), "input W")};
  q.input_exp = detail::to_int(cfg.macro(up + "_INPUT_EXP"), "input exponent");

  for (std::size_t i = 0; i < count; ++i) {
    const auto fname = layer_header_name(lo, i);
    const auto* f = bundle.find(fname);
    if (!f) throw Error(Errc::ParseError, "missing layer header " + fname);
    detail::HeaderParser h(f->name, f->text);
    const std::string mu = up + "_L" + std::to_string(i);
    const std::string ml = lo + "_l" + std::to_string(i);
    QuantizedLayer l;
    const auto kind = h.macro(mu + "_KIND");
    if (kind < 0 || kind > 3) throw Error(Errc::RangeError, fname + ": unknown layer kind " + std::to_string(kind));
    l.spec.kind = static_cast<LayerKind>(kind);
    l.spec.in_channels = detail::to_count(h.macro(mu + "_IN"), mu + "_IN");
    l.spec.out_channels = detail::to_count(h.macro(mu + "_OUT"), mu + "_OUT");
    l.spec.padding = detail::to_count(h.macro(mu + "_PAD"), mu + "_PAD");
    l.weight_exp = detail::to_int(h.macro(mu + "_W_EXP"), mu + "_W_EXP");
    l.act_exp = detail::to_int(h.macro(mu + "_ACT_EXP"), mu + "_ACT_EXP");
    const auto flags = h.macro(mu + "_FLAGS");
    l.spec.has_relu = (flags & kFlagRelu) != 0;
    l.spec.has_batchnorm = (flags & kFlagBatchNorm) != 0;
    l.wide = (flags & kFlagWide) != 0;
    if (is_conv(l.spec.kind)) {
      for (auto v : h.array(ml + "_weights", -128, 127)) l.weights.push_back(static_cast<std::int8_t>(v));
      for (auto v : h.array(ml + "_bias", std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::max())) {
        l.bias.push_back(static_cast<std::int32_t>(v));
      }
      if (l.weights.size() != l.spec.weight_count()) {
        throw Error(Errc::ParseError, fname + ": " + ml + "_weights has " + std::to_string(l.weights.size()) +
                                          " values, expected " + std::to_string(l.spec.weight_count()));
      }
      if (l.bias.size() != l.spec.out_channels) {
        throw Error(Errc::ParseError, fname + ": " + ml + "_bias has " + std::to_string(l.bias.size()) +
                                          " values, expected " + std::to_string(l.spec.out_channels));
      }
    }
    q.layers.push_back(std::move(l));
  }
  return q;
}

struct TestVector {
  Int8Tensor input;
  IntOutput expected;
};

/// Golden fixture: quantized input plus the integer engine's output for it.
inline std::string emit_test_vector(const QuantizedModel& q, const Int8Tensor& image, std::string_view name = "bed") {
  detail::require_identifier(name);
  const IntOutput out = forward_int8(q, image);
  const std::string up = detail::upper(name) + "_TV";
  const std::string lo = std::string(name) + "_tv";
  std::string h;
  h += "// " + std::string(name) + " golden test vector\n";
  h += "#ifndef " + up + "_H\n#define " + up + "_H\n\n";
  detail::render_macro(h, up + "_INPUT_C", static_cast<long long>(image.shape().channels));
  detail::render_macro(h, up + "_INPUT_H", static_cast<long long>(image.shape().height));
  detail::render_macro(h, up + "_INPUT_W", static_cast<long long>(image.shape().width));
  detail::render_macro(h, up + "_INPUT_EXP", q.input_exp);
  detail::render_macro(h, up + "_OUTPUT_C", static_cast<long long>(out.values.shape().channels));
  detail::render_macro(h, up + "_OUTPUT_H", static_cast<long long>(out.values.shape().height));
  detail::render_macro(h, up + "_OUTPUT_W", static_cast<long long>(out.values.shape().width));
  detail::render_macro(h, up + "_OUTPUT_EXP", out.scale_exp);
  h += "\n";
  detail::render_array(h, "signed char", lo + "_input", image.data());
  h += "\n";
  detail::render_array(h, "long", lo + "_expected_output", out.values.data());
  h += "\n#endif\n";
  return h;
}

inline TestVector parse_test_vector(std::string_view text, std::string_view name = "bed") {
  detail::require_identifier(name);
  const std::string up = detail::upper(name) + "_TV";
  const std::string lo = std::string(name) + "_tv";
  detail::HeaderParser h(lo + ".h", text);
  const Shape in{detail::to_count(h.macro(up + "_INPUT_C"), "C"), detail::to_count(h.macro(up + "_INPUT_H"), "H"),
                 detail::to_count(h.macro(up + "_INPUT_W"), "W")};
  const Shape out{detail::to_count(h.macro(up + "_OUTPUT_C"), "C"), detail::to_count(h.macro(up + "_OUTPUT_H"), "H"),
                  detail::to_count(h.macro(up + "_OUTPUT_W"), "W")};
  std::vector<std::int8_t> x;
  for (auto v : h.array(lo + "_input", -128, 127)) x.push_back(static_cast<std::int8_t>(v));
  std::vector<std::int32_t> y;
  for (auto v : h.array(lo + "_expected_output", std::numeric_limits<std::int32_t>::min(),
                        std::numeric_limits<std::int32_t>::max())) {
    y.push_back(static_cast<std::int32_t>(v));
  }
  if (x.size() != in.size() || y.size() != out.size()) throw Error(Errc::ParseError, "test vector array sizes disagree with dims");
  return {Int8Tensor(in, std::move(x)),
          IntOutput{Int32Tensor(out, std::move(y)), detail::to_int(h.macro(up + "_OUTPUT_EXP"), "output exponent")}};
}

}  // namespace bed
