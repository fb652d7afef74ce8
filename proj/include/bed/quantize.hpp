#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bed/error.hpp"
#include "bed/model_ir.hpp"
#include "bed/rounding.hpp"
#include "bed/tensor.hpp"

namespace bed {

inline constexpr int kMinScaleExp = 0;
inline constexpr int kMaxScaleExp = 30;
inline constexpr int kDefaultScaleExp = 7;
/// Camera pixels map to (p - 128) / 128, i.e. q = p - 128 at this exponent.
inline constexpr int kInputScaleExp = 7;

/// Symmetric power-of-two scale: real value = q * 2^-scale_exp, zero point 0.
struct QuantParams {
  int scale_exp = kDefaultScaleExp;
  static constexpr int zero_point = 0;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline void require_finite(float v) {
  if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "value " + std::to_string(v));
}

/// Largest n in [0, 30] with max|v| <= 127 * 2^-n. All-zero input gives 7.
inline int choose_scale_exp(std::span<const float> values) {
  if (values.empty()) throw Error(Errc::InvalidArgument, "choose_scale_exp on empty array");
  double max_abs = 0.0;
  for (float v : values) {
    require_finite(v);
    max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
  }
  if (max_abs == 0.0) return kDefaultScaleExp;
  for (int n = kMaxScaleExp; n > kMinScaleExp; --n) {
    if (max_abs <= std::ldexp(127.0, -n)) return n;
  }
  return kMinScaleExp;
}

/// q = clamp(round_half_away(v * 2^n), -128, 127)
inline std::int8_t quantize_value(double v, int scale_exp) {
  if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "value " + std::to_string(v));
  const double scaled = round_half_away(std::ldexp(v, scale_exp));
  if (scaled >= 127.0) return 127;
  if (scaled <= -128.0) return -128;
  return static_cast<std::int8_t>(scaled);
}

/// Bias lands on the accumulator grid 2^-(w_exp + in_exp). Clamped to the
/// symmetric INT32 range so every value renders as a plain decimal literal.
inline std::int32_t quantize_bias_value(double v, int acc_exp) {
  if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "bias " + std::to_string(v));
  constexpr double kMax = std::numeric_limits<std::int32_t>::max();
  const double scaled = round_half_away(std::ldexp(v, acc_exp));
  return static_cast<std::int32_t>(std::clamp(scaled, -kMax, kMax));
}

inline float dequantize_value(std::int64_t q, int scale_exp) {
  return std::ldexp(static_cast<float>(q), -scale_exp);
}

inline Int8Tensor quantize_tensor(const FloatTensor& t, QuantParams p) {
  std::vector<std::int8_t> q(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) q[i] = quantize_value(t[i], p.scale_exp);
  return {t.shape(), std::move(q)};
}

template <typename Int>
FloatTensor dequantize(const Tensor<Int>& q, QuantParams p) {
  std::vector<float> v(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) v[i] = dequantize_value(q[i], p.scale_exp);
  return {q.shape(), std::move(v)};
}

/// Quantize-then-dequantize.
inline float fake_quantize_value(double v, int scale_exp) {
  return dequantize_value(quantize_value(v, scale_exp), scale_exp);
}

/// One layer after quantization. For pooling layers weights and bias are
/// empty, weight_exp is 0 and act_exp repeats the input exponent. For the
/// wide layer act_exp is the accumulator exponent weight_exp + input exp.
struct QuantizedLayer {
  LayerSpec spec;
  std::vector<std::int8_t> weights;
  std::vector<std::int32_t> bias;
  int weight_exp = 0;
  int act_exp = 0;
  bool wide = false;

  friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

struct QuantizedModel {
  Shape input_shape{3, 224, 224};
  int input_exp = kInputScaleExp;
  std::vector<QuantizedLayer> layers;

  bool last_layer_wide() const {
    for (const auto& l : layers) {
      if (l.wide) return true;
    }
    return false;
  }

  /// Exponent of the values leaving the last layer.
  int output_exp() const { return layers.empty() ? input_exp : layers.back().act_exp; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> s;
    for (const auto& l : layers) s.push_back(l.spec);
    return s;
  }

  /// Float-graph view with the dequantized parameters, for shape and
  /// constraint checks.
  ModelGraph graph() const {
    ModelGraph g;
    g.input_shape = input_shape;
    for (const auto& l : layers) {
      LayerWeights w;
      for (auto q : l.weights) w.weights.push_back(dequantize_value(q, l.weight_exp));
      const int acc_exp = l.weight_exp + exp_before(&l - layers.data());
      for (auto b : l.bias) w.bias.push_back(dequantize_value(b, acc_exp));
      g.add(l.spec, std::move(w));
    }
    return g;
  }

  /// Exponent of the tensor entering layer i.
  int exp_before(std::ptrdiff_t i) const { return i == 0 ? input_exp : layers[i - 1].act_exp; }

  friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

/// Structural checks on a quantized model: array sizes, exponent chain and
/// placement of the wide layer.
inline void validate_quantized(const QuantizedModel& m) {
  infer_shapes(m.graph());
  bool seen_wide = false;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    const auto where = "layer " + std::to_string(i) + ": ";
    const int in_exp = m.exp_before(static_cast<std::ptrdiff_t>(i));
    if (l.weights.size() != l.spec.weight_count() ||
        l.bias.size() != (is_conv(l.spec.kind) ? l.spec.out_channels : 0)) {
      throw Error(Errc::ShapeMismatch, where + "parameter count does not match layer dims");
    }
    if (is_conv(l.spec.kind)) {
      if (seen_wide) throw Error(Errc::ShapeMismatch, where + "convolution after the wide layer");
      if (l.weight_exp < kMinScaleExp || l.weight_exp > kMaxScaleExp) {
        throw Error(Errc::RangeError, where + "weight exponent out of range");
      }
      if (l.wide) {
        if (l.act_exp != l.weight_exp + in_exp) {
          throw Error(Errc::ShapeMismatch, where + "wide layer exponent must be weight_exp + input exp");
        }
        seen_wide = true;
      } else if (l.act_exp < kMinScaleExp || l.act_exp > kMaxScaleExp) {
        throw Error(Errc::RangeError, where + "activation exponent out of range");
      }
    } else {
      if (l.wide) throw Error(Errc::ShapeMismatch, where + "pooling layer cannot be wide");
      if (l.act_exp != in_exp) throw Error(Errc::ShapeMismatch, where + "pooling must keep the exponent");
    }
  }
}

}  // namespace bed
