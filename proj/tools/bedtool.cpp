// Command-line front end for the detector toolchain.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bed/bed.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitConstraint = 3;

bool has_magic(const fs::path& p, std::string_view magic) {
  const auto bytes = bed::read_file(p);
  return bytes.size() >= magic.size() && std::equal(magic.begin(), magic.end(), bytes.begin());
}

/// Layer list and input shape of either checkpoint kind.
bed::ModelGraph load_any_graph(const fs::path& p) {
  if (has_magic(p, "BEDQ")) return bed::load_quantized(p).graph();
  return bed::load_checkpoint(p);
}

std::vector<bed::FloatTensor> calibration_images(const std::string& dir, std::size_t random_count, std::uint64_t seed,
                                                 const bed::Shape& input) {
  std::vector<bed::FloatTensor> out;
  if (!dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(bed::load_image_ppm(f));
  }
  bed::SeededUniform rng(seed);
  for (std::size_t i = 0; i < random_count; ++i) {
    bed::Image img{input.width, input.height, std::vector<std::uint8_t>(input.plane() * 3)};
    for (auto& p : img.rgb) p = static_cast<std::uint8_t>(rng.bits() & 0xff);
    out.push_back(bed::image_to_tensor(img));
  }
  return out;
}

void print_constraints(const bed::ConstraintReport& r) {
  for (const auto& v : r.operator_violations) std::cout << "violation layer " << v.layer << ": " << v.reason << "\n";
  std::cout << "operators " << (r.operator_violations.empty() ? "ok" : "FAIL") << "\n";
  std::cout << "weight_bytes " << r.weight_bytes << " / " << r.weight_budget << (r.weights_fit() ? " ok" : " FAIL") << "\n";
  std::cout << "activation_peak_bytes " << r.activation_peak_bytes << " / " << r.activation_budget
            << (r.activations_fit() ? " ok" : " FAIL") << "\n";
  std::cout << "result " << (r.passed() ? "PASS" : "FAIL") << "\n";
}

bool require_deployable(const bed::QuantizedModel& q) {
  const auto report = bed::check_constraints(q.graph());
  if (!report.passed()) {
    print_constraints(report);
    return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bedtool: tiny detector toolchain (validate, quantize, synthesize, run)"};
  app.require_subcommand(1);

  std::string ckpt, qckpt, image, out, dataset, calib_dir, name = "bed", test_vector, records_path, detections_path;
  std::uint64_t seed = bed::kDefaultSeed;
  std::size_t calib_random = 0;
  std::size_t block_size = 16'384;
  float conf = bed::kDefaultConfThreshold;
  float nms_iou = bed::kDefaultNmsIou;

  auto* make_ref = app.add_subcommand("make-ref", "write the seeded reference model (BEDC) and its text manifest");
  make_ref->add_option("-o,--output", out, "checkpoint path")->required();
  make_ref->add_option("--seed", seed, "weight seed");

  auto* validate = app.add_subcommand("validate", "check a checkpoint against the accelerator constraints");
  validate->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);

  auto* quantize = app.add_subcommand("quantize", "fold batch-norm and quantize a float checkpoint");
  quantize->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  quantize->add_option("--calib", calib_dir, "directory of calibration PPM images")->check(CLI::ExistingDirectory);
  quantize->add_option("--calib-random", calib_random, "additional seeded random calibration images");
  quantize->add_option("--seed", seed, "seed for --calib-random");
  quantize->add_option("-o,--output", out, "quantized checkpoint path")->required();

  auto* synthesize = app.add_subcommand("synthesize", "emit C headers for a quantized checkpoint");
  synthesize->add_option("checkpoint", qckpt)->required()->check(CLI::ExistingFile);
  synthesize->add_option("-o,--output", out, "output directory")->required();
  synthesize->add_option("--name", name, "identifier prefix");
  synthesize->add_option("--test-vector", test_vector, "PPM image to freeze as a golden test vector")->check(CLI::ExistingFile);

  auto* infer = app.add_subcommand("infer", "run the integer engine and print the raw grid");
  infer->add_option("checkpoint", qckpt)->required()->check(CLI::ExistingFile);
  infer->add_option("image", image)->required()->check(CLI::ExistingFile);
  infer->add_option("--block-size", block_size, "image transfer block size in bytes");

  auto* detect = app.add_subcommand("detect", "detect objects and write an annotated image");
  detect->add_option("checkpoint", qckpt)->required()->check(CLI::ExistingFile);
  detect->add_option("image", image)->required()->check(CLI::ExistingFile);
  detect->add_option("-o,--output", out, "annotated PPM path")->required();
  detect->add_option("--records", records_path, "detection records path (default stdout)");

  auto* eval = app.add_subcommand("eval", "score a dataset and report per-class AP and mAP");
  eval->add_option("checkpoint", qckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("dataset", dataset)->required()->check(CLI::ExistingDirectory);
  eval->add_option("-o,--output", out, "report path (also printed)");
  eval->add_option("--detections", detections_path, "score these records instead of running the model")
      ->check(CLI::ExistingFile);
  eval->add_option("--records", records_path, "write the model's detection records here");

  for (auto* sub : {detect, eval}) {
    sub->add_option("--conf-threshold", conf, "minimum detection score")->check(CLI::Range(0.0f, 1.0f));
    sub->add_option("--nms-iou", nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0f, 1.0f));
    sub->add_option("--block-size", block_size, "image transfer block size in bytes");
  }

  auto* cost = app.add_subcommand("cost", "modeled latency and energy");
  cost->add_option("checkpoint", qckpt)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*make_ref) {
      const auto m = bed::build_reference_model(seed);
      bed::save_checkpoint(out, m);
      bed::write_file(out + ".txt", bed::checkpoint_manifest(m));
      std::cout << "wrote " << out << " (" << m.layers.size() << " layers)\n";
    } else if (*validate) {
      const auto g = load_any_graph(ckpt);
      const auto report = bed::check_constraints(g);
      print_constraints(report);
      if (report.passed()) std::cout << "output_shape " << bed::to_string(bed::output_shape(g)) << "\n";
      return report.passed() ? kExitOk : kExitConstraint;
    } else if (*quantize) {
      const auto m = bed::load_checkpoint(ckpt);
      const auto calib = calibration_images(calib_dir, calib_random, seed, m.input_shape);
      const auto q = bed::quantize_model(m, calib);
      bed::save_quantized(out, q);
      std::cout << "wrote " << out << " (" << calib.size() << " calibration images)\n";
    } else if (*synthesize) {
      const auto q = bed::load_quantized(qckpt);
      const auto bundle = bed::emit_headers(q, name);
      bed::write_bundle(bundle, out);
      if (!test_vector.empty()) {
        const auto tv = bed::emit_test_vector(q, bed::quantize_image(bed::read_ppm(test_vector)), name);
        bed::write_file(fs::path(out) / (name + "_test_vector.h"), tv);
      }
      std::cout << bundle.manifest << "total: " << bundle.total_bytes() << "\n";
    } else if (*infer) {
      const auto q = bed::load_quantized(qckpt);
      if (!require_deployable(q)) return kExitConstraint;
      const auto img = bed::quantize_image(bed::read_ppm(image));
      const auto plan = bed::plan_blocks(img.size(), block_size);
      const auto res = bed::forward_int8(q, bed::stream_blocks(img, plan));
      const auto& s = res.values.shape();
      std::cout << "shape " << bed::to_string(s) << " exp " << res.scale_exp << " blocks " << plan.block_count << "\n";
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          std::cout << "cell " << y << " " << x << ":";
          for (std::size_t c = 0; c < s.channels; ++c) std::cout << " " << res.values.at(c, y, x);
          std::cout << "\n";
        }
      }
    } else if (*detect) {
      const auto q = bed::load_quantized(qckpt);
      if (!require_deployable(q)) return kExitConstraint;
      const auto img = bed::read_ppm(image);
      const auto outcome = bed::run_detect(q, img, {conf, nms_iou, block_size});
      const auto text = bed::format_records(fs::path(image).stem().string(), outcome.detections);
      if (records_path.empty()) {
        std::cout << text;
      } else {
        bed::write_file(records_path, text);
      }
      bed::write_ppm(out, bed::draw_detections(img, outcome.detections));
    } else if (*eval) {
      const auto ds = bed::load_dataset(dataset);
      bed::EvalReport report;
      if (!detections_path.empty()) {
        const auto raw = bed::read_file(detections_path);
        const auto dets = bed::parse_records(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
        report = bed::evaluate_records(dets, ds.truths, ds.image_ids.size());
      } else {
        const auto q = bed::load_quantized(qckpt);
        if (!require_deployable(q)) return kExitConstraint;
        std::vector<bed::DetectionRecord> recs;
        report = bed::run_eval(q, ds, {conf, nms_iou, block_size}, &recs);
        if (!records_path.empty()) {
          std::string text;
          for (const auto& r : recs) text += bed::format_record(r);
          bed::write_file(records_path, text);
        }
      }
      const auto text = bed::format_eval_report(report);
      std::cout << text;
      if (!out.empty()) bed::write_file(out, text);
    } else if (*cost) {
      const auto g = load_any_graph(qckpt);
      std::cout << bed::format_cost_report(bed::cost_model(g.layers, g.input_shape));
    }
  } catch (const bed::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
