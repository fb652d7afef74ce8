#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bed/checkpoint.hpp"
#include "bed/detect.hpp"
#include "bed/error.hpp"
#include "bed/inference.hpp"
#include "bed/model_ir.hpp"
#include "bed/quantize.hpp"
#include "bed/tensor.hpp"

namespace bed {

// ---------------------------------------------------------------- images

/// 8-bit RGB raster, interleaved row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_++] - '0');
      if (++digits > 9) throw Error(Errc::MalformedPPM, std::string(what) + " too large");
    }
    if (digits == 0) throw Error(Errc::MalformedPPM, std::string("expected ") + what);
    return v;
  }

  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw Error(Errc::MalformedPPM, "expected whitespace after maxval");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace detail

/// Binary "P6" PPM with maxval 255.
inline Image parse_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw Error(Errc::MalformedPPM, "missing P6 magic");
  detail::PpmHeaderReader r(bytes);
  Image img;
  img.width = r.number("width");
  img.height = r.number("height");
  const auto maxval = r.number("maxval");
  if (maxval != 255) throw Error(Errc::UnsupportedMaxval, "maxval " + std::to_string(maxval) + " (only 255)");
  r.single_whitespace();
  if (img.width == 0 || img.height == 0) throw Error(Errc::MalformedPPM, "zero-sized image");
  const auto n = img.width * img.height * 3;
  if (bytes.size() - r.pos() < n) {
    throw Error(Errc::MalformedPPM, "pixel data truncated: " + std::to_string(bytes.size() - r.pos()) + " of " +
                                        std::to_string(n) + " bytes");
  }
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                 bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + n));
  return img;
}

inline Image read_ppm(const std::filesystem::path& path) { return parse_ppm(read_file(path)); }

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) { write_file(path, encode_ppm(img)); }

/// CHW float tensor with pixels mapped to (p - 128) / 128.
inline FloatTensor image_to_tensor(const Image& img) {
  FloatTensor t({3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        t.at(c, y, x) = (static_cast<float>(img.pixel(x, y)[c]) - 128.0f) / 128.0f;
      }
    }
  }
  return t;
}

inline FloatTensor load_image_ppm(const std::filesystem::path& path) { return image_to_tensor(read_ppm(path)); }

/// Camera bytes straight onto the INT8 input grid (exponent 7): q = p - 128.
inline Int8Tensor quantize_image(const Image& img) {
  Int8Tensor t({3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<std::int8_t>(int{img.pixel(x, y)[c]} - 128);
    }
  }
  return t;
}

// ---------------------------------------------------------- block loading

struct BlockLoadPlan {
  std::size_t image_bytes = 0;
  std::size_t block_size = 0;
  std::size_t block_count = 0;
  std::size_t buffer_capacity = kActivationBudgetBytes;
};

inline BlockLoadPlan plan_blocks(std::size_t image_bytes, std::size_t block_size) {
  if (block_size == 0) throw Error(Errc::InvalidArgument, "block size must be positive");
  if (block_size > kActivationBudgetBytes) {
    throw Error(Errc::BlockTooLarge, "block of " + std::to_string(block_size) + " bytes exceeds the " +
                                         std::to_string(kActivationBudgetBytes) + "-byte buffer");
  }
  if (image_bytes > kActivationBudgetBytes) {
    throw Error(Errc::BlockTooLarge, "image of " + std::to_string(image_bytes) + " bytes exceeds the buffer");
  }
  return {image_bytes, block_size, (image_bytes + block_size - 1) / block_size, kActivationBudgetBytes};
}

/// Sends the quantized image through the device buffer one block at a time
/// and returns what the device reassembled. `on_block(offset, length)` is
/// called per transfer.
inline Int8Tensor stream_blocks(const Int8Tensor& image, const BlockLoadPlan& plan,
                                const std::function<void(std::size_t, std::size_t)>& on_block = {}) {
  if (plan.image_bytes != image.size()) {
    throw Error(Errc::InvalidArgument, "plan covers " + std::to_string(plan.image_bytes) + " bytes, image has " +
                                           std::to_string(image.size()));
  }
  std::vector<std::uint8_t> host(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) host[i] = static_cast<std::uint8_t>(image[i]);

  std::vector<std::uint8_t> device(plan.buffer_capacity, 0);
  std::size_t loaded = 0;
  for (std::size_t b = 0; b < plan.block_count; ++b) {
    const auto offset = b * plan.block_size;
    const auto len = std::min(plan.block_size, host.size() - offset);
    std::copy_n(host.begin() + static_cast<std::ptrdiff_t>(offset), len,
                device.begin() + static_cast<std::ptrdiff_t>(offset));
    loaded += len;
    if (on_block) on_block(offset, len);
  }
  if (loaded != host.size()) throw Error(Errc::InvalidArgument, "block plan did not cover the image");

  std::vector<std::int8_t> out(image.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int8_t>(device[i]);
  return {image.shape(), std::move(out)};
}

// -------------------------------------------------------------- cost model

inline constexpr double kMeasuredLatencyMs = 91.9;
inline constexpr double kMeasuredPowerMw = 20.08;

inline std::uint64_t total_macs(const std::vector<LayerSpec>& layers, const Shape& input) {
  std::uint64_t macs = 0;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Shape next = infer_layer_shape(cur, layers[i], i);
    if (is_conv(layers[i].kind)) macs += layers[i].weight_count() * next.plane();
    cur = next;
  }
  return macs;
}

inline std::uint64_t reference_macs() { return total_macs(reference_layers(), {3, 224, 224}); }

struct CostReport {
  std::uint64_t total_macs = 0;
  std::size_t weight_bytes = 0;
  double modeled_latency_ms = 0;
  double modeled_energy_mj = 0;
  double measured_latency_ms = kMeasuredLatencyMs;
  double measured_power_mw = kMeasuredPowerMw;
};

/// Latency scales linearly with MACs from the single measured point of the
/// reference detector; energy = power * latency.
inline CostReport cost_model(const std::vector<LayerSpec>& layers, const Shape& input) {
  CostReport r;
  r.total_macs = total_macs(layers, input);
  r.weight_bytes = weight_bytes_quantized(layers);
  r.modeled_latency_ms = kMeasuredLatencyMs * static_cast<double>(r.total_macs) / static_cast<double>(reference_macs());
  r.modeled_energy_mj = r.measured_power_mw * r.modeled_latency_ms / 1000.0;
  return r;
}

inline CostReport cost_model(const QuantizedModel& q) { return cost_model(q.specs(), q.input_shape); }

inline std::string format_cost_report(const CostReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "total_macs %llu\nweight_bytes %zu\nlatency_ms %.3f\npower_mW %.2f\nenergy_mJ %.4f\n"
                "calibration latency_ms %.1f power_mW %.2f\n",
                static_cast<unsigned long long>(r.total_macs), r.weight_bytes, r.modeled_latency_ms, r.measured_power_mw,
                r.modeled_energy_mj, r.measured_latency_ms, r.measured_power_mw);
  return buf;
}

// --------------------------------------------------------------- detection

struct DetectOptions {
  float conf_threshold = kDefaultConfThreshold;
  float nms_iou = kDefaultNmsIou;
  std::size_t block_size = 16'384;
};

struct DetectOutcome {
  IntOutput raw;
  std::vector<Detection> detections;
  std::size_t blocks = 0;
};

/// load -> quantize -> stream -> integer forward -> dequantize -> decode -> NMS
inline DetectOutcome run_detect(const QuantizedModel& q, const Image& img, const DetectOptions& opt = {}) {
  const Int8Tensor direct = quantize_image(img);
  if (direct.shape() != q.input_shape) {
    throw Error(Errc::ShapeMismatch, "image " + to_string(direct.shape()) + " does not match model input " +
                                         to_string(q.input_shape));
  }
  DetectOutcome out;
  const auto plan = plan_blocks(direct.size(), opt.block_size);
  const Int8Tensor loaded = stream_blocks(direct, plan);
  out.blocks = plan.block_count;
  out.raw = forward_int8(q, loaded);
  const FloatTensor grid = activate_head(out.raw.dequantized());
  out.detections = nms(decode_grid(grid, opt.conf_threshold), opt.nms_iou);
  return out;
}

inline constexpr std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassColors{{
    {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}, {255, 0, 255},
}};

/// Pixel rectangle covered by a box drawn on an image of the given size.
struct PixelRect {
  std::size_t x0, y0, x1, y1;
};

inline PixelRect box_pixels(const Box& b, std::size_t width, std::size_t height) {
  const double sx = static_cast<double>(width) / kImageSize;
  const double sy = static_cast<double>(height) / kImageSize;
  auto px = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  PixelRect r{px(std::floor(b.x_min * sx), width), px(std::floor(b.y_min * sy), height),
              px(std::ceil(b.x_max * sx) - 1, width), px(std::ceil(b.y_max * sy) - 1, height)};
  r.x1 = std::max(r.x1, r.x0);
  r.y1 = std::max(r.y1, r.y0);
  return r;
}

/// Copy of `img` with a 1-pixel outline per detection, colored by class.
inline Image draw_detections(const Image& img, const std::vector<Detection>& dets) {
  Image out = img;
  for (const auto& d : dets) {
    const auto& color = kClassColors[static_cast<std::size_t>(d.class_id) % kNumClasses];
    const auto r = box_pixels(d.box, img.width, img.height);
    auto put = [&](std::size_t x, std::size_t y) { std::copy(color.begin(), color.end(), out.pixel(x, y)); };
    for (std::size_t x = r.x0; x <= r.x1; ++x) {
      put(x, r.y0);
      put(x, r.y1);
    }
    for (std::size_t y = r.y0; y <= r.y1; ++y) {
      put(r.x0, y);
      put(r.x1, y);
    }
  }
  return out;
}

inline std::string format_records(const std::string& image_id, const std::vector<Detection>& dets) {
  std::string out;
  for (const auto& d : dets) out += format_record({image_id, d});
  return out;
}

// -------------------------------------------------------------- evaluation

inline constexpr std::string_view kGroundTruthFile = "ground_truth.txt";

struct Dataset {
  std::vector<std::string> image_ids;  // sorted
  std::vector<GroundTruth> truths;
  std::filesystem::path dir;

  std::filesystem::path image_path(const std::string& id) const { return dir / (id + ".ppm"); }
};

/// `<dir>/<id>.ppm` images plus `<dir>/ground_truth.txt`.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.dir = dir;
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::Io, dir.string() + " is not a directory");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") ds.image_ids.push_back(e.path().stem().string());
  }
  std::sort(ds.image_ids.begin(), ds.image_ids.end());
  const auto gt_path = dir / std::string(kGroundTruthFile);
  if (std::filesystem::exists(gt_path)) {
    const auto raw = read_file(gt_path);
    ds.truths = parse_truths(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
  }
  if (ds.image_ids.empty() && ds.truths.empty()) throw Error(Errc::EmptyDataset, dir.string() + " has no images or ground truth");
  return ds;
}

struct EvalReport {
  EvalResult result;
  std::size_t images = 0;
  std::size_t detections = 0;
  std::size_t truths = 0;
};

inline std::string format_eval_report(const EvalReport& r) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "images %zu\ndetections %zu\nground_truth %zu\n", r.images, r.detections, r.truths);
  out += buf;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (r.result.class_ap[c]) {
      std::snprintf(buf, sizeof buf, "class %zu AP %.6f\n", c, *r.result.class_ap[c]);
    } else {
      std::snprintf(buf, sizeof buf, "class %zu AP n/a\n", c);
    }
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mAP %.6f\n", r.result.mean_ap);
  out += buf;
  return out;
}

inline EvalReport evaluate_records(const std::vector<DetectionRecord>& dets, const std::vector<GroundTruth>& truths,
                                   std::size_t images, float iou_match = kDefaultMatchIou) {
  return {mean_average_precision(dets, truths, iou_match), images, dets.size(), truths.size()};
}

/// Runs the detector over every dataset image (in id order) and scores it.
inline EvalReport run_eval(const QuantizedModel& q, const Dataset& ds, const DetectOptions& opt = {},
                           std::vector<DetectionRecord>* records = nullptr) {
  if (ds.image_ids.empty()) throw Error(Errc::EmptyDataset, "no images in " + ds.dir.string());
  std::vector<DetectionRecord> all;
  for (const auto& id : ds.image_ids) {
    const auto outcome = run_detect(q, read_ppm(ds.image_path(id)), opt);
    for (const auto& d : outcome.detections) all.push_back({id, d});
  }
  auto report = evaluate_records(all, ds.truths, ds.image_ids.size());
  if (records) *records = std::move(all);
  return report;
}

}  // namespace bed
