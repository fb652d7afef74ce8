#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bed/error.hpp"
#include "bed/tensor.hpp"

namespace bed {

/// Operator whitelist of the accelerator. Values are the checkpoint encoding;
/// anything else is an unsupported operator.
enum class LayerKind : std::uint8_t {
  Conv3x3 = 0,
  Conv1x1 = 1,
  MaxPool2x2 = 2,
  AvgPool2x2 = 3,
};

inline bool is_known_kind(LayerKind k) { return static_cast<std::uint8_t>(k) <= 3; }
inline bool is_conv(LayerKind k) { return k == LayerKind::Conv3x3 || k == LayerKind::Conv1x1; }
inline bool is_pool(LayerKind k) { return k == LayerKind::MaxPool2x2 || k == LayerKind::AvgPool2x2; }

inline std::size_t kernel_size(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3x3: return 3;
    case LayerKind::Conv1x1: return 1;
    case LayerKind::MaxPool2x2:
    case LayerKind::AvgPool2x2: return 2;
  }
  return 0;
}

inline std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::Conv1x1: return "conv1x1";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::AvgPool2x2: return "avgpool2x2";
  }
  return "unknown(" + std::to_string(static_cast<int>(k)) + ")";
}

struct LayerSpec {
  LayerKind kind = LayerKind::Conv3x3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  bool has_relu = false;
  bool has_batchnorm = false;
  std::size_t padding = 1;

  std::size_t weight_count() const {
    if (!is_conv(kind)) return 0;
    const auto k = kernel_size(kind);
    return out_channels * in_channels * k * k;
  }

  static LayerSpec conv3x3(std::size_t in, std::size_t out, bool relu = true, bool bn = false) {
    return {LayerKind::Conv3x3, in, out, relu, bn, 1};
  }
  static LayerSpec conv1x1(std::size_t in, std::size_t out, bool relu = false, bool bn = false) {
    return {LayerKind::Conv1x1, in, out, relu, bn, 0};
  }
  static LayerSpec max_pool(std::size_t channels) {
    return {LayerKind::MaxPool2x2, channels, channels, false, false, 0};
  }
  static LayerSpec avg_pool(std::size_t channels) {
    return {LayerKind::AvgPool2x2, channels, channels, false, false, 0};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float epsilon = 1e-5f;

  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

/// Parameters of one layer; empty for pooling layers.
/// Weights are stored [out][in][kh][kw].
struct LayerWeights {
  std::vector<float> weights;
  std::vector<float> bias;
  std::optional<BatchNormParams> batchnorm;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

using WeightStore = std::vector<LayerWeights>;

/// Sequential model. `weights` runs parallel to `layers`.
struct ModelGraph {
  Shape input_shape{3, 224, 224};
  std::vector<LayerSpec> layers;
  WeightStore weights;

  void add(const LayerSpec& spec, LayerWeights w = {}) {
    layers.push_back(spec);
    weights.push_back(std::move(w));
  }

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

inline constexpr std::size_t kWeightBudgetBytes = 442'368;      // 432 KB flash
inline constexpr std::size_t kActivationBudgetBytes = 917'504;  // 896 KB data memory
inline constexpr std::size_t kBiasBytes = 4;

/// Output shape of a single layer applied to `in`.
inline Shape infer_layer_shape(const Shape& in, const LayerSpec& layer, std::size_t index = 0) {
  const auto where = "layer " + std::to_string(index) + ": ";
  if (!is_known_kind(layer.kind)) {
    throw Error(Errc::UnsupportedOperator, where + kind_name(layer.kind));
  }
  if (layer.in_channels != in.channels) {
    throw Error(Errc::ChannelMismatch, where + "expects " + std::to_string(layer.in_channels) +
                                          " input channels, got " + std::to_string(in.channels));
  }
  if (layer.in_channels == 0 || layer.out_channels == 0) {
    throw Error(Errc::ShapeMismatch, where + "channel counts must be >= 1");
  }
  if (is_pool(layer.kind)) {
    if (layer.out_channels != layer.in_channels) {
      throw Error(Errc::ChannelMismatch, where + "pooling must keep the channel count");
    }
    if (in.height % 2 != 0 || in.width % 2 != 0) {
      throw Error(Errc::OddSpatialDim, where + "cannot pool " + to_string(in));
    }
    return {in.channels, in.height / 2, in.width / 2};
  }
  const auto k = kernel_size(layer.kind);
  const auto h = in.height + 2 * layer.padding;
  const auto w = in.width + 2 * layer.padding;
  if (h < k || w < k) {
    throw Error(Errc::ShapeMismatch, where + "input " + to_string(in) + " smaller than kernel");
  }
  return {layer.out_channels, h - k + 1, w - k + 1};
}

/// Per-layer output shapes, first to last.
inline std::vector<Shape> infer_shapes(const ModelGraph& model) {
  std::vector<Shape> shapes;
  shapes.reserve(model.layers.size());
  Shape cur = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    cur = infer_layer_shape(cur, model.layers[i], i);
    shapes.push_back(cur);
  }
  return shapes;
}

inline Shape output_shape(const ModelGraph& model) {
  const auto shapes = infer_shapes(model);
  return shapes.empty() ? model.input_shape : shapes.back();
}

struct OperatorViolation {
  std::size_t layer = 0;
  std::string reason;
};

/// Layers outside the whitelist. Never throws.
inline std::vector<OperatorViolation> validate_operators(const ModelGraph& model) {
  std::vector<OperatorViolation> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!is_known_kind(l.kind)) {
      out.push_back({i, "operator " + kind_name(l.kind) + " is not supported"});
      continue;
    }
    if (l.kind == LayerKind::Conv3x3 && l.padding > 1) {
      out.push_back({i, "conv3x3 padding " + std::to_string(l.padding) + " > 1"});
    } else if (l.kind == LayerKind::Conv1x1 && l.padding != 0) {
      out.push_back({i, "conv1x1 padding must be 0"});
    } else if (is_pool(l.kind) && (l.padding != 0 || l.has_relu || l.has_batchnorm)) {
      out.push_back({i, kind_name(l.kind) + " takes no padding, activation or batchnorm"});
    }
  }
  return out;
}

/// Deployed weight storage: one byte per weight, four per bias. Batch-norm
/// parameters fold into those and cost nothing.
inline std::size_t weight_bytes_quantized(const std::vector<LayerSpec>& layers) {
  std::size_t bytes = 0;
  for (const auto& l : layers) {
    if (!is_known_kind(l.kind) || !is_conv(l.kind)) continue;
    bytes += l.weight_count() + l.out_channels * kBiasBytes;
  }
  return bytes;
}

inline std::size_t weight_bytes_quantized(const ModelGraph& model) {
  return weight_bytes_quantized(model.layers);
}

/// Peak of input + output buffer bytes over every layer, INT8 activations.
inline std::size_t activation_peak_bytes(const ModelGraph& model) {
  std::size_t peak = model.input_shape.size();
  Shape cur = model.input_shape;
  for (const auto& next : infer_shapes(model)) {
    peak = std::max(peak, cur.size() + next.size());
    cur = next;
  }
  return peak;
}

struct ConstraintReport {
  std::vector<OperatorViolation> operator_violations;
  std::size_t weight_bytes = 0;
  std::size_t weight_budget = kWeightBudgetBytes;
  std::size_t activation_peak_bytes = 0;
  std::size_t activation_budget = kActivationBudgetBytes;

  bool weights_fit() const { return weight_bytes <= weight_budget; }
  bool activations_fit() const { return activation_peak_bytes <= activation_budget; }
  bool passed() const { return operator_violations.empty() && weights_fit() && activations_fit(); }
};

/// Full hardware check. A graph whose shapes do not infer is reported as a
/// violation at the failing layer instead of throwing.
inline ConstraintReport check_constraints(const ModelGraph& model) {
  ConstraintReport r;
  r.operator_violations = validate_operators(model);
  r.weight_bytes = weight_bytes_quantized(model);
  try {
    r.activation_peak_bytes = activation_peak_bytes(model);
  } catch (const Error& e) {
    r.operator_violations.push_back({model.layers.size(), std::string("shape inference: ") + e.what()});
  }
  return r;
}

/// Folds every batch-norm into the preceding convolution's weights and bias.
inline ModelGraph fold_batchnorm(const ModelGraph& model) {
  ModelGraph out = model;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    auto& spec = out.layers[i];
    if (!spec.has_batchnorm) continue;
    auto& w = out.weights.at(i);
    const auto n = spec.out_channels;
    if (!is_conv(spec.kind) || !w.batchnorm || w.batchnorm->gamma.size() != n ||
        w.batchnorm->beta.size() != n || w.batchnorm->running_mean.size() != n ||
        w.batchnorm->running_var.size() != n || w.bias.size() != n) {
      throw Error(Errc::MissingBNParams, "layer " + std::to_string(i));
    }
    const auto& bn = *w.batchnorm;
    const auto per_out = spec.weight_count() / n;
    for (std::size_t o = 0; o < n; ++o) {
      const double denom = static_cast<double>(bn.running_var[o]) + bn.epsilon;
      if (!(denom > 0.0)) {
        throw Error(Errc::MissingBNParams, "layer " + std::to_string(i) + ": running_var + epsilon <= 0");
      }
      const double scale = bn.gamma[o] / std::sqrt(denom);
      for (std::size_t j = 0; j < per_out; ++j) {
        auto& v = w.weights[o * per_out + j];
        v = static_cast<float>(v * scale);
      }
      w.bias[o] = static_cast<float>((static_cast<double>(w.bias[o]) - bn.running_mean[o]) * scale + bn.beta[o]);
    }
    w.batchnorm.reset();
    spec.has_batchnorm = false;
  }
  return out;
}

/// Uniform float in [lo, hi) derived only from mt19937 output bits, so a
/// seed yields the same model on every standard library.
class SeededUniform {
 public:
  explicit SeededUniform(std::uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

  double unit() { return static_cast<double>(gen_() >> 8) * (1.0 / 16777216.0); }
  float operator()(float lo, float hi) { return static_cast<float>(lo + (hi - lo) * unit()); }
  std::uint32_t bits() { return gen_(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(unit() * static_cast<double>(n)); }

 private:
  std::mt19937 gen_;
};

/// Fills conv weights ~U(-a, a) with a = sqrt(3 / fan_in), biases small.
inline LayerWeights random_weights(const LayerSpec& spec, SeededUniform& rng, float bias_range = 0.05f) {
  LayerWeights w;
  if (!is_conv(spec.kind)) return w;
  const auto k = kernel_size(spec.kind);
  const float a = static_cast<float>(std::sqrt(3.0 / static_cast<double>(spec.in_channels * k * k)));
  w.weights.resize(spec.weight_count());
  for (auto& v : w.weights) v = rng(-a, a);
  w.bias.resize(spec.out_channels);
  for (auto& v : w.bias) v = rng(-bias_range, bias_range);
  if (spec.has_batchnorm) {
    BatchNormParams bn;
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      bn.gamma.push_back(rng(0.8f, 1.2f));
      bn.beta.push_back(rng(-0.1f, 0.1f));
      bn.running_mean.push_back(rng(-0.1f, 0.1f));
      bn.running_var.push_back(rng(0.5f, 1.5f));
    }
    w.batchnorm = std::move(bn);
  }
  return w;
}

/// Layer list of the reference detector: five conv/pool stages take
/// 224x224 down to the 7x7 grid, then a 1x1 head emits 15 values per cell.
inline std::vector<LayerSpec> reference_layers() {
  return {
      LayerSpec::conv3x3(3, 12, true, true),    LayerSpec::max_pool(12),
      LayerSpec::conv3x3(12, 32, true, true),   LayerSpec::max_pool(32),
      LayerSpec::conv3x3(32, 64, true, true),   LayerSpec::max_pool(64),
      LayerSpec::conv3x3(64, 64, true, true),   LayerSpec::conv3x3(64, 64, true, true),
      LayerSpec::max_pool(64),                  LayerSpec::conv3x3(64, 128, true, true),
      LayerSpec::max_pool(128),                 LayerSpec::conv3x3(128, 112, true, true),
      LayerSpec::conv1x1(112, 15, false, false),
  };
}

inline constexpr std::uint64_t kDefaultSeed = 2022;

inline ModelGraph build_reference_model(std::uint64_t seed = kDefaultSeed) {
  ModelGraph m;
  m.input_shape = {3, 224, 224};
  SeededUniform rng(seed);
  for (const auto& spec : reference_layers()) m.add(spec, random_weights(spec, rng));
  return m;
}

}  // namespace bed
