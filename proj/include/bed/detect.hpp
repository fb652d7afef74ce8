#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bed/error.hpp"
#include "bed/tensor.hpp"

namespace bed {

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::size_t kGridSize = 7;
inline constexpr std::size_t kBoxesPerCell = 2;
inline constexpr std::size_t kBoxValues = 5;  // x_off, y_off, w, h, confidence
inline constexpr std::size_t kCellValues = kNumClasses + kBoxesPerCell * kBoxValues;
inline constexpr double kImageSize = 224.0;
inline constexpr double kCellSize = kImageSize / kGridSize;
inline constexpr Shape kGridShape{kCellValues, kGridSize, kGridSize};

inline constexpr float kDefaultConfThreshold = 0.1f;
inline constexpr float kDefaultNmsIou = 0.5f;
inline constexpr float kDefaultMatchIou = 0.5f;

/// Absolute box in pixels: (x_min, y_min, x_max, y_max).
struct Box {
  float x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double area() const { return (static_cast<double>(x_max) - x_min) * (static_cast<double>(y_max) - y_min); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  int class_id = 0;
  float score = 0;
  Box box;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  std::string image_id;
  int class_id = 0;
  Box box;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct DetectionRecord {
  std::string image_id;
  Detection det;
  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

/// Channel of value `v` of box `b` in the per-cell layout
/// [p0..p4, box0(x, y, w, h, conf), box1(...)].
constexpr std::size_t box_channel(std::size_t b, std::size_t v) { return kNumClasses + b * kBoxValues + v; }

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min<double>(a.x_max, b.x_max) - std::max<double>(a.x_min, b.x_min);
  const double ih = std::min<double>(a.y_max, b.y_max) - std::max<double>(a.y_min, b.y_min);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Softmax over each cell's class logits; box values pass through.
inline FloatTensor activate_head(const FloatTensor& raw) {
  if (raw.shape() != kGridShape) throw Error(Errc::ShapeMismatch, "head output " + to_string(raw.shape()));
  FloatTensor out = raw;
  for (std::size_t r = 0; r < kGridSize; ++r) {
    for (std::size_t c = 0; c < kGridSize; ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kNumClasses; ++k) mx = std::max<double>(mx, raw.at(k, r, c));
      double sum = 0;
      std::array<double, kNumClasses> e{};
      for (std::size_t k = 0; k < kNumClasses; ++k) sum += e[k] = std::exp(raw.at(k, r, c) - mx);
      for (std::size_t k = 0; k < kNumClasses; ++k) out.at(k, r, c) = static_cast<float>(e[k] / sum);
    }
  }
  return out;
}

namespace detail {

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Cell-relative box -> pixels, clipped to the image.
inline Box cell_box(std::size_t row, std::size_t col, double x_off, double y_off, double w, double h) {
  const double cx = (static_cast<double>(col) + clamp01(x_off)) * kCellSize;
  const double cy = (static_cast<double>(row) + clamp01(y_off)) * kCellSize;
  const double bw = clamp01(w) * kImageSize;
  const double bh = clamp01(h) * kImageSize;
  auto clip = [](double v) { return static_cast<float>(std::clamp(v, 0.0, kImageSize)); };
  return {clip(cx - bw / 2), clip(cy - bh / 2), clip(cx + bw / 2), clip(cy + bh / 2)};
}

}  // namespace detail

/// Grid tensor (15,7,7) -> candidate boxes with score >= conf_threshold.
/// Values are clamped to [0,1]; score = confidence * best class prob.
inline std::vector<Detection> decode_grid(const FloatTensor& grid, float conf_threshold) {
  if (grid.shape() != kGridShape) throw Error(Errc::ShapeMismatch, "grid " + to_string(grid.shape()));
  if (!(conf_threshold >= 0.0f && conf_threshold <= 1.0f)) {
    throw Error(Errc::InvalidArgument, "confidence threshold must lie in [0,1]");
  }
  std::vector<Detection> dets;
  for (std::size_t r = 0; r < kGridSize; ++r) {
    for (std::size_t c = 0; c < kGridSize; ++c) {
      int best = 0;
      double best_p = detail::clamp01(grid.at(0, r, c));
      for (std::size_t k = 1; k < kNumClasses; ++k) {
        const double p = detail::clamp01(grid.at(k, r, c));
        if (p > best_p) {
          best_p = p;
          best = static_cast<int>(k);
        }
      }
      for (std::size_t b = 0; b < kBoxesPerCell; ++b) {
        const double conf = detail::clamp01(grid.at(box_channel(b, 4), r, c));
        const float score = static_cast<float>(conf * best_p);
        if (score < conf_threshold) continue;
        dets.push_back({best, score,
                        detail::cell_box(r, c, grid.at(box_channel(b, 0), r, c), grid.at(box_channel(b, 1), r, c),
                                         grid.at(box_channel(b, 2), r, c), grid.at(box_channel(b, 3), r, c))});
      }
    }
  }
  return dets;
}

/// Total order used for ranking: score desc, then x_min, y_min, class,
/// x_max, y_max ascending.
inline bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
  if (a.box.y_min != b.box.y_min) return a.box.y_min < b.box.y_min;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  if (a.box.x_max != b.box.x_max) return a.box.x_max < b.box.x_max;
  return a.box.y_max < b.box.y_max;
}

/// Class-wise greedy suppression. Output is in rank order.
inline std::vector<Detection> nms(std::vector<Detection> dets, float iou_threshold) {
  if (!(iou_threshold >= 0.0f && iou_threshold <= 1.0f)) {
    throw Error(Errc::InvalidArgument, "IoU threshold must lie in [0,1]");
  }
  std::stable_sort(dets.begin(), dets.end(), ranks_before);
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct LossTerms {
  double coord_mse = 0;
  double class_ce = 0;
};

/// Encoded regression target of one object in its responsible cell.
struct CellTarget {
  std::size_t row = 0, col = 0;
  std::array<double, kBoxValues> values{};  // x_off, y_off, w, h, confidence
};

inline CellTarget encode_target(const Box& b) {
  if (!b.valid() || b.x_min < 0 || b.y_min < 0 || b.x_max > kImageSize || b.y_max > kImageSize) {
    throw Error(Errc::BoxOutsideImage, "box outside the 224x224 image");
  }
  const double cx = (static_cast<double>(b.x_min) + b.x_max) / 2;
  const double cy = (static_cast<double>(b.y_min) + b.y_max) / 2;
  CellTarget t;
  t.col = std::min(static_cast<std::size_t>(cx / kCellSize), kGridSize - 1);
  t.row = std::min(static_cast<std::size_t>(cy / kCellSize), kGridSize - 1);
  t.values = {cx / kCellSize - static_cast<double>(t.col), cy / kCellSize - static_cast<double>(t.row),
              (static_cast<double>(b.x_max) - b.x_min) / kImageSize, (static_cast<double>(b.y_max) - b.y_min) / kImageSize,
              1.0};
  return t;
}

/// Squared error of the responsible box against the encoded target, and
/// cross entropy of the softmaxed class logits, each averaged over object
/// cells. A cell takes the first object whose center falls in it; the
/// responsible box is the predicted box with higher IoU (box 0 on ties).
inline LossTerms detection_loss(const FloatTensor& pred, const std::vector<GroundTruth>& truth) {
  if (pred.shape() != kGridShape) throw Error(Errc::ShapeMismatch, "prediction " + to_string(pred.shape()));
  std::array<bool, kGridSize * kGridSize> taken{};
  double sq = 0, ce = 0;
  std::size_t objects = 0;
  for (const auto& gt : truth) {
    if (gt.class_id < 0 || gt.class_id >= static_cast<int>(kNumClasses)) {
      throw Error(Errc::InvalidArgument, "class id " + std::to_string(gt.class_id));
    }
    const CellTarget t = encode_target(gt.box);
    auto& slot = taken[t.row * kGridSize + t.col];
    if (slot) continue;
    slot = true;
    ++objects;

    std::size_t resp = 0;
    double best = -1;
    for (std::size_t b = 0; b < kBoxesPerCell; ++b) {
      const Box pb = detail::cell_box(t.row, t.col, pred.at(box_channel(b, 0), t.row, t.col),
                                      pred.at(box_channel(b, 1), t.row, t.col), pred.at(box_channel(b, 2), t.row, t.col),
                                      pred.at(box_channel(b, 3), t.row, t.col));
      const double o = iou(pb, gt.box);
      if (o > best) {
        best = o;
        resp = b;
      }
    }
    for (std::size_t v = 0; v < kBoxValues; ++v) {
      const double d = pred.at(box_channel(resp, v), t.row, t.col) - t.values[v];
      sq += d * d;
    }

    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kNumClasses; ++k) mx = std::max<double>(mx, pred.at(k, t.row, t.col));
    double sum = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) sum += std::exp(pred.at(k, t.row, t.col) - mx);
    ce += -(pred.at(static_cast<std::size_t>(gt.class_id), t.row, t.col) - mx - std::log(sum));
  }
  if (objects == 0) return {};
  return {sq / static_cast<double>(objects * kBoxValues), ce / static_cast<double>(objects)};
}

struct EvalResult {
  double mean_ap = 0;
  std::array<std::optional<double>, kNumClasses> class_ap{};  // empty when the class has no truth
};

/// All-point interpolated AP from a ranked TP/FP sequence.
inline double average_precision(const std::vector<bool>& tp_ranked, std::size_t positives) {
  if (positives == 0) return 0;
  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (bool t : tp_ranked) {
    (t ? tp : fp)++;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

/// VOC-style evaluation: per class, detections ranked by score are
/// greedily matched to the best unmatched truth in the same image with
/// IoU >= iou_match. mAP averages classes that have at least one truth.
inline EvalResult mean_average_precision(const std::vector<DetectionRecord>& dets,
                                         const std::vector<GroundTruth>& truths,
                                         float iou_match = kDefaultMatchIou) {
  EvalResult result;
  std::size_t counted = 0;
  double total = 0;
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    const int c = static_cast<int>(cls);
    std::map<std::string, std::vector<std::size_t>> by_image;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
      if (truths[i].class_id != c) continue;
      by_image[truths[i].image_id].push_back(i);
      ++positives;
    }
    if (positives == 0) continue;

    std::vector<const DetectionRecord*> ranked;
    for (const auto& d : dets) {
      if (d.det.class_id == c) ranked.push_back(&d);
    }
    std::sort(ranked.begin(), ranked.end(), [](const DetectionRecord* a, const DetectionRecord* b) {
      if (a->det.score != b->det.score) return a->det.score > b->det.score;
      if (a->image_id != b->image_id) return a->image_id < b->image_id;
      return ranks_before(a->det, b->det);
    });

    std::vector<bool> matched(truths.size(), false);
    std::vector<bool> tp;
    for (const auto* d : ranked) {
      std::optional<std::size_t> best;
      double best_iou = -1;
      if (auto it = by_image.find(d->image_id); it != by_image.end()) {
        for (auto ti : it->second) {
          if (matched[ti]) continue;
          const double o = iou(d->det.box, truths[ti].box);
          if (o > best_iou) {
            best_iou = o;
            best = ti;
          }
        }
      }
      const bool hit = best && best_iou >= iou_match;
      if (hit) matched[*best] = true;
      tp.push_back(hit);
    }
    const double ap = average_precision(tp, positives);
    result.class_ap[cls] = ap;
    total += ap;
    ++counted;
  }
  result.mean_ap = counted ? total / static_cast<double>(counted) : 0.0;
  return result;
}

// Line-delimited records:
//   detection:    image_id class_id score x_min y_min x_max y_max
//   ground truth: image_id class_id x_min y_min x_max y_max

inline std::string format_record(const DetectionRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %d %.6f %.3f %.3f %.3f %.3f\n", r.image_id.c_str(), r.det.class_id,
                static_cast<double>(r.det.score), static_cast<double>(r.det.box.x_min), static_cast<double>(r.det.box.y_min),
                static_cast<double>(r.det.box.x_max), static_cast<double>(r.det.box.y_max));
  return buf;
}

inline std::string format_truth(const GroundTruth& g) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %d %.3f %.3f %.3f %.3f\n", g.image_id.c_str(), g.class_id,
                static_cast<double>(g.box.x_min), static_cast<double>(g.box.y_min), static_cast<double>(g.box.x_max),
                static_cast<double>(g.box.y_max));
  return buf;
}

namespace detail {

template <typename Fn>
void for_each_record_line(std::string_view text, std::size_t fields, Fn&& fn) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != fields) {
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": expected " + std::to_string(fields) +
                                        " fields, got " + std::to_string(tok.size()));
    }
    try {
      fn(tok);
    } catch (const std::logic_error&) {
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": malformed number");
    }
  }
}

}  // namespace detail

inline std::vector<DetectionRecord> parse_records(std::string_view text) {
  std::vector<DetectionRecord> out;
  detail::for_each_record_line(text, 7, [&](const std::vector<std::string>& t) {
    out.push_back({t[0], {std::stoi(t[1]), std::stof(t[2]), {std::stof(t[3]), std::stof(t[4]), std::stof(t[5]), std::stof(t[6])}}});
  });
  return out;
}

inline std::vector<GroundTruth> parse_truths(std::string_view text) {
  std::vector<GroundTruth> out;
  detail::for_each_record_line(text, 6, [&](const std::vector<std::string>& t) {
    out.push_back({t[0], std::stoi(t[1]), {std::stof(t[2]), std::stof(t[3]), std::stof(t[4]), std::stof(t[5])}});
  });
  return out;
}

}  // namespace bed
