#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <type_traits>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bed/error.hpp"
#include "bed/model_ir.hpp"
#include "bed/quantize.hpp"
#include "bed/rounding.hpp"
#include "bed/tensor.hpp"

#ifndef BED_CHECKED_ACCUMULATORS
#ifdef NDEBUG
#define BED_CHECKED_ACCUMULATORS 0
#else
#define BED_CHECKED_ACCUMULATORS 1
#endif
#endif

namespace bed {

inline constexpr bool kCheckedAccumulators = BED_CHECKED_ACCUMULATORS != 0;

/// Worst-case |sum of products| for a 3x3 kernel over `in_channels` INT8 inputs.
constexpr std::int64_t worst_case_products(std::int64_t in_channels) { return 9 * in_channels * 128 * 128; }
static_assert(worst_case_products(1024) <= std::numeric_limits<std::int32_t>::max());

namespace detail {

template <typename Acc, typename In, typename Wt, typename Bias>
std::vector<Acc> conv_direct(const Tensor<In>& x, const LayerSpec& spec, std::span<const Wt> w,
                             std::span<const Bias> bias, const Shape& out) {
  const auto k = kernel_size(spec.kind);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const auto in_h = static_cast<std::ptrdiff_t>(x.shape().height);
  const auto in_w = static_cast<std::ptrdiff_t>(x.shape().width);
  std::vector<Acc> acc(out.size());
  for (std::size_t o = 0; o < out.channels; ++o) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t xo = 0; xo < out.width; ++xo) {
        Acc sum = static_cast<Acc>(bias[o]);
        for (std::size_t i = 0; i < spec.in_channels; ++i) {
          const Wt* kern = &w[((o * spec.in_channels) + i) * k * k];
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
            if (iy < 0 || iy >= in_h) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(xo + kx) - pad;
              if (ix < 0 || ix >= in_w) continue;
              sum += static_cast<Acc>(kern[ky * k + kx]) *
                     static_cast<Acc>(x.at(i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)));
            }
          }
        }
        acc[(o * out.height + y) * out.width + xo] = sum;
      }
    }
  }
  return acc;
}

inline void check_conv_params(const LayerSpec& spec, std::size_t weights, std::size_t bias) {
  if (!is_conv(spec.kind)) throw Error(Errc::UnsupportedOperator, kind_name(spec.kind) + " is not a convolution");
  if (weights != spec.weight_count() || bias != spec.out_channels) {
    throw Error(Errc::ShapeMismatch, "conv parameters do not match " + kind_name(spec.kind) + " " +
                                         std::to_string(spec.in_channels) + "->" +
                                         std::to_string(spec.out_channels));
  }
}

}  // namespace detail

/// Direct convolution with zero padding and optional ReLU.
inline FloatTensor conv_float(const FloatTensor& x, const LayerSpec& spec, const LayerWeights& w) {
  detail::check_conv_params(spec, w.weights.size(), w.bias.size());
  const Shape out = infer_layer_shape(x.shape(), spec);
  auto acc = detail::conv_direct<double, float, float, float>(x, spec, w.weights, w.bias, out);
  std::vector<float> y(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double v = spec.has_relu ? std::max(acc[i], 0.0) : acc[i];
    y[i] = static_cast<float>(v);
  }
  return {out, std::move(y)};
}

/// 2x2 stride-2 pooling. Integer average rounds half away from zero.
template <typename T>
Tensor<T> pool(const Tensor<T>& x, LayerKind kind) {
  if (!is_pool(kind)) throw Error(Errc::UnsupportedOperator, kind_name(kind) + " is not a pooling layer");
  const auto& s = x.shape();
  if (s.height % 2 != 0 || s.width % 2 != 0) throw Error(Errc::OddSpatialDim, "cannot pool " + to_string(s));
  Tensor<T> out({s.channels, s.height / 2, s.width / 2});
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height / 2; ++y) {
      for (std::size_t xo = 0; xo < s.width / 2; ++xo) {
        const T a = x.at(c, 2 * y, 2 * xo);
        const T b = x.at(c, 2 * y, 2 * xo + 1);
        const T d = x.at(c, 2 * y + 1, 2 * xo);
        const T e = x.at(c, 2 * y + 1, 2 * xo + 1);
        T r;
        if (kind == LayerKind::MaxPool2x2) {
          r = std::max({a, b, d, e});
        } else if constexpr (std::is_floating_point_v<T>) {
          r = static_cast<T>((static_cast<double>(a) + b + d + e) / 4.0);
        } else {
          const std::int64_t sum = std::int64_t{a} + b + d + e;
          r = saturate<T>(rounding_shift(sum, 2));
        }
        out.at(c, y, xo) = r;
      }
    }
  }
  return out;
}

/// Float reference engine; returns every layer's output.
inline std::vector<FloatTensor> forward_float_trace(const ModelGraph& model, const FloatTensor& x) {
  if (x.shape() != model.input_shape) {
    throw Error(Errc::ShapeMismatch, "input " + to_string(x.shape()) + " vs model " + to_string(model.input_shape));
  }
  if (model.weights.size() != model.layers.size()) {
    throw Error(Errc::ShapeMismatch, "weight store does not cover every layer");
  }
  std::vector<FloatTensor> trace;
  const FloatTensor* cur = &x;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& spec = model.layers[i];
    if (spec.has_batchnorm) {
      // Batch-norm is evaluated unfolded here so this engine can check folding.
      const auto& bn = model.weights[i].batchnorm;
      if (!bn) throw Error(Errc::MissingBNParams, "layer " + std::to_string(i));
      LayerSpec linear = spec;
      linear.has_relu = false;
      FloatTensor y = conv_float(*cur, linear, model.weights[i]);
      const auto plane = y.shape().plane();
      for (std::size_t o = 0; o < y.shape().channels; ++o) {
        const double s = bn->gamma[o] / std::sqrt(static_cast<double>(bn->running_var[o]) + bn->epsilon);
        for (std::size_t j = 0; j < plane; ++j) {
          auto& v = y[o * plane + j];
          double r = (v - static_cast<double>(bn->running_mean[o])) * s + bn->beta[o];
          if (spec.has_relu) r = std::max(r, 0.0);
          v = static_cast<float>(r);
        }
      }
      trace.push_back(std::move(y));
    } else if (is_conv(spec.kind)) {
      trace.push_back(conv_float(*cur, spec, model.weights[i]));
    } else {
      infer_layer_shape(cur->shape(), spec, i);
      trace.push_back(pool(*cur, spec.kind));
    }
    cur = &trace.back();
  }
  return trace;
}

inline FloatTensor forward_float(const ModelGraph& model, const FloatTensor& x) {
  auto trace = forward_float_trace(model, x);
  return trace.empty() ? x : std::move(trace.back());
}

/// INT32 accumulators of a quantized conv: sum of w_q * x_q plus bias,
/// ReLU applied on the accumulator. No intermediate saturation.
inline Int32Tensor conv_accumulate(const Int8Tensor& x, const QuantizedLayer& layer) {
  detail::check_conv_params(layer.spec, layer.weights.size(), layer.bias.size());
  const Shape out = infer_layer_shape(x.shape(), layer.spec);
  auto acc = detail::conv_direct<std::int64_t, std::int8_t, std::int8_t, std::int32_t>(
      x, layer.spec, layer.weights, layer.bias, out);
  std::vector<std::int32_t> y(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    std::int64_t v = acc[i];
    if constexpr (kCheckedAccumulators) {
      if (v > std::numeric_limits<std::int32_t>::max() || v < std::numeric_limits<std::int32_t>::min()) {
        throw Error(Errc::AccumulatorOverflow, "accumulator " + std::to_string(v) + " exceeds INT32");
      }
    }
    if (layer.spec.has_relu && v < 0) v = 0;
    y[i] = static_cast<std::int32_t>(v);
  }
  return {out, std::move(y)};
}

/// Accumulator -> INT8 at the next exponent: shift by
/// weight_exp + in_exp - act_exp, round half away from zero, saturate.
inline Int8Tensor requantize(const Int32Tensor& acc, int shift) {
  std::vector<std::int8_t> q(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) q[i] = saturate<std::int8_t>(rounding_shift(acc[i], shift));
  return {acc.shape(), std::move(q)};
}

/// Quantized conv producing INT8. `in_exp` is the exponent of `x`.
inline Int8Tensor conv_int8(const Int8Tensor& x, const QuantizedLayer& layer, int in_exp) {
  if (layer.wide) throw Error(Errc::InvalidArgument, "wide layer produces INT32; use conv_accumulate");
  return requantize(conv_accumulate(x, layer), layer.weight_exp + in_exp - layer.act_exp);
}

/// Integer engine output: INT32 values (INT8 range unless the wide layer
/// ran) and their exponent.
struct IntOutput {
  Int32Tensor values;
  int scale_exp = 0;

  FloatTensor dequantized() const { return dequantize(values, {scale_exp}); }
};

inline IntOutput forward_int8(const QuantizedModel& model, const Int8Tensor& x) {
  if (x.shape() != model.input_shape) {
    throw Error(Errc::ShapeMismatch, "input " + to_string(x.shape()) + " vs model " + to_string(model.input_shape));
  }
  Int8Tensor cur = x;
  std::optional<Int32Tensor> wide;
  int exp = model.input_exp;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (is_conv(l.spec.kind)) {
      if (wide) throw Error(Errc::ShapeMismatch, "layer " + std::to_string(i) + ": convolution after the wide layer");
      if (l.wide) {
        wide = conv_accumulate(cur, l);
      } else {
        cur = conv_int8(cur, l, exp);
      }
    } else {
      infer_layer_shape(wide ? wide->shape() : cur.shape(), l.spec, i);
      if (wide) {
        *wide = pool(*wide, l.spec.kind);
      } else {
        cur = pool(cur, l.spec.kind);
      }
    }
    exp = l.act_exp;
  }
  if (wide) return {std::move(*wide), exp};
  std::vector<std::int32_t> widened(cur.values().begin(), cur.values().end());
  return {{cur.shape(), std::move(widened)}, exp};
}

}  // namespace bed
