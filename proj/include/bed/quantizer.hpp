#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bed/error.hpp"
#include "bed/inference.hpp"
#include "bed/model_ir.hpp"
#include "bed/quantize.hpp"
#include "bed/rounding.hpp"
#include "bed/tensor.hpp"

namespace bed {

struct LayerScales {
  int weight_exp = 0;
  int act_exp = 0;
};

/// Exponents used by the simulated-quantization forward pass.
struct ScaleChain {
  int input_exp = kInputScaleExp;
  std::vector<LayerScales> layers;
  bool last_layer_wide = true;
};

inline ScaleChain scale_chain(const QuantizedModel& m) {
  ScaleChain s;
  s.input_exp = m.input_exp;
  s.last_layer_wide = m.last_layer_wide();
  for (const auto& l : m.layers) s.layers.push_back({l.weight_exp, l.act_exp});
  return s;
}

namespace detail {

inline std::size_t last_conv_index(const std::vector<LayerSpec>& layers) {
  std::size_t idx = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (is_conv(layers[i].kind)) idx = i;
  }
  return idx;
}

/// Snaps v onto the grid 2^-exp, saturating to the range of Int.
template <typename Int>
double snap(double v, int exp) {
  // + 0.0 turns -0 into +0, matching the integer engine.
  const double q = round_half_away(std::ldexp(v, exp)) + 0.0;
  const double lo = std::numeric_limits<Int>::min();
  const double hi = std::numeric_limits<Int>::max();
  return std::ldexp(std::clamp(q, lo, hi), -exp);
}

}  // namespace detail

/// Float simulation of the deployed integer arithmetic:
/// H[l+1] = Q(f(W_q H[l] + b_q)), with Q the INT8 grid of layer l's output.
/// The input is snapped to the input grid first. Intermediate values are
/// held in double so every sum stays exact; the last conv skips Q when
/// `scales.last_layer_wide` is set.
inline FloatTensor fake_quant_forward(const ModelGraph& model, const FloatTensor& x, const ScaleChain& scales) {
  if (scales.layers.size() != model.layers.size()) {
    throw Error(Errc::InvalidArgument, "scale chain does not cover every layer");
  }
  if (x.shape() != model.input_shape) {
    throw Error(Errc::ShapeMismatch, "input " + to_string(x.shape()) + " vs model " + to_string(model.input_shape));
  }
  const std::size_t wide_at = scales.last_layer_wide ? detail::last_conv_index(model.layers) : model.layers.size();

  std::vector<double> init(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require_finite(x[i]);
    init[i] = detail::snap<std::int8_t>(x[i], scales.input_exp);
  }
  Tensor<double> cur(x.shape(), std::move(init));
  int exp = scales.input_exp;
  bool wide = false;

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& spec = model.layers[li];
    const auto& sc = scales.layers[li];
    if (spec.has_batchnorm) throw Error(Errc::InvalidArgument, "fold batch-norm before simulating quantization");
    const Shape out = infer_layer_shape(cur.shape(), spec, li);
    if (is_conv(spec.kind)) {
      const auto& w = model.weights.at(li);
      detail::check_conv_params(spec, w.weights.size(), w.bias.size());
      std::vector<double> wq(w.weights.size());
      for (std::size_t i = 0; i < wq.size(); ++i) wq[i] = fake_quantize_value(w.weights[i], sc.weight_exp);
      const int acc_exp = sc.weight_exp + exp;
      std::vector<double> bq(w.bias.size());
      for (std::size_t i = 0; i < bq.size(); ++i) {
        bq[i] = std::ldexp(static_cast<double>(quantize_bias_value(w.bias[i], acc_exp)), -acc_exp);
      }
      auto acc = detail::conv_direct<double, double, double, double>(cur, spec, wq, bq, out);
      const bool this_wide = li == wide_at;
      for (auto& v : acc) {
        if (spec.has_relu) v = std::max(v, 0.0);
        v = this_wide ? detail::snap<std::int32_t>(v, acc_exp) : detail::snap<std::int8_t>(v, sc.act_exp);
      }
      cur = Tensor<double>(out, std::move(acc));
      exp = this_wide ? acc_exp : sc.act_exp;
      wide = wide || this_wide;
    } else {
      Tensor<double> pooled = pool(cur, spec.kind);
      for (auto& v : pooled.values()) {
        v = wide ? detail::snap<std::int32_t>(v, exp) : detail::snap<std::int8_t>(v, exp);
      }
      cur = std::move(pooled);
    }
  }
  std::vector<float> y(cur.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(cur[i]);
  return {cur.shape(), std::move(y)};
}

/// Post-training quantization. Weight exponents come from each layer's
/// weights; activation exponents from the max-abs of that layer's float
/// outputs over all calibration inputs. The last conv keeps its INT32
/// accumulators (no requantization).
struct QuantizeOptions {
  bool last_layer_wide = true;
};

inline QuantizedModel quantize_model(const ModelGraph& source, std::span<const FloatTensor> calibration,
                                     QuantizeOptions options = {}) {
  if (calibration.empty()) throw Error(Errc::EmptyCalibration, "at least one calibration input is required");
  const ModelGraph model = fold_batchnorm(source);
  infer_shapes(model);

  std::vector<double> act_max(model.layers.size(), 0.0);
  for (const auto& img : calibration) {
    const auto trace = forward_float_trace(model, img);
    for (std::size_t li = 0; li < trace.size(); ++li) {
      for (float v : trace[li].values()) {
        require_finite(v);
        act_max[li] = std::max(act_max[li], std::fabs(static_cast<double>(v)));
      }
    }
  }

  QuantizedModel q;
  q.input_shape = model.input_shape;
  q.input_exp = kInputScaleExp;
  const std::size_t wide_at = options.last_layer_wide ? detail::last_conv_index(model.layers) : model.layers.size();
  int exp = q.input_exp;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& spec = model.layers[li];
    QuantizedLayer ql;
    ql.spec = spec;
    if (is_conv(spec.kind)) {
      const auto& w = model.weights[li];
      detail::check_conv_params(spec, w.weights.size(), w.bias.size());
      ql.weight_exp = choose_scale_exp(w.weights);
      for (float v : w.weights) ql.weights.push_back(quantize_value(v, ql.weight_exp));
      const int acc_exp = ql.weight_exp + exp;
      for (float b : w.bias) ql.bias.push_back(quantize_bias_value(b, acc_exp));
      if (li == wide_at) {
        ql.wide = true;
        ql.act_exp = acc_exp;
      } else {
        const float m = static_cast<float>(act_max[li]);
        ql.act_exp = choose_scale_exp(std::span<const float>(&m, 1));
      }
    } else {
      ql.act_exp = exp;
    }
    exp = ql.act_exp;
    q.layers.push_back(std::move(ql));
  }
  return q;
}

}  // namespace bed
