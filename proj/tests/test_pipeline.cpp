#include <gtest/gtest.h>

#include <filesystem>

#include "bed/bed.hpp"
#include "test_support.hpp"

using namespace bed;
namespace fs = std::filesystem;

namespace {

Image random_image(SeededUniform& rng, std::size_t w = 224, std::size_t h = 224) {
  Image img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (auto& p : img.rgb) p = static_cast<std::uint8_t>(rng.bits() & 0xff);
  return img;
}

QuantizedModel reference_quantized() {
  SeededUniform rng(61);
  const auto m = build_reference_model();
  const auto x = image_to_tensor(random_image(rng));
  return quantize_model(m, std::span(&x, 1));
}

/// Every layer bias zero, so a zero input stays zero through the network.
QuantizedModel zero_bias_model() {
  auto m = build_reference_model();
  for (auto& w : m.weights) {
    std::fill(w.bias.begin(), w.bias.end(), 0.0f);
    if (w.batchnorm) {
      std::fill(w.batchnorm->beta.begin(), w.batchnorm->beta.end(), 0.0f);
      std::fill(w.batchnorm->running_mean.begin(), w.batchnorm->running_mean.end(), 0.0f);
    }
  }
  SeededUniform rng(62);
  const auto x = image_to_tensor(random_image(rng));
  return quantize_model(m, std::span(&x, 1));
}

}  // namespace

TEST(Ppm, KnownBytes) {
  const std::string file = std::string("P6\n# two by two\n2 2\n255\n") +
                           std::string("\x00\x80\xff\x40\x7f\x81\x01\x02\x03\xfe\xfd\xfc", 12);
  const auto img = parse_ppm(std::span(reinterpret_cast<const std::uint8_t*>(file.data()), file.size()));
  ASSERT_EQ(img.width, 2u);
  const auto t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(t.at(0, 0, 0), -1.0f);
  EXPECT_EQ(t.at(1, 0, 0), 0.0f);
  EXPECT_EQ(t.at(2, 0, 0), 127.0f / 128.0f);
  EXPECT_EQ(t.at(0, 0, 1), -0.5f);
  EXPECT_EQ(t.at(2, 1, 1), (252.0f - 128.0f) / 128.0f);
  EXPECT_EQ(t.at(0, 1, 0), -127.0f / 128.0f);
}

TEST(Ppm, MidGrayIsZero) {
  Image img{4, 3, std::vector<std::uint8_t>(36, 128)};
  const auto t = image_to_tensor(img);
  for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Ppm, Errors) {
  auto code = [](const std::string& s) {
    try {
      parse_ppm(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::Io;
  };
  EXPECT_EQ(code("P6\n2 2\n255\n" + std::string(11, 'a')), Errc::MalformedPPM);
  EXPECT_EQ(code("P3\n2 2\n255\n"), Errc::MalformedPPM);
  EXPECT_EQ(code("P6\n2 2\n65535\n" + std::string(24, 'a')), Errc::UnsupportedMaxval);
  EXPECT_EQ(code("P6\n2\n"), Errc::MalformedPPM);
}

TEST(Ppm, WriteReadRoundTrip) {
  SeededUniform rng(63);
  const auto img = random_image(rng, 5, 3);
  EXPECT_EQ(parse_ppm(encode_ppm(img)), img);
}

TEST(QuantizeImage, MatchesTensorQuantization) {
  SeededUniform rng(64);
  const auto img = random_image(rng, 16, 8);
  EXPECT_EQ(quantize_image(img), quantize_tensor(image_to_tensor(img), {kInputScaleExp}));
}

TEST(Blocks, Plan) {
  EXPECT_EQ(plan_blocks(150'528, 16'384).block_count, 10u);
  EXPECT_EQ(plan_blocks(150'528, 150'528).block_count, 1u);
  EXPECT_EQ(plan_blocks(150'528, 1).block_count, 150'528u);
  try {
    plan_blocks(150'528, 917'505);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BlockTooLarge);
  }
  EXPECT_THROW(plan_blocks(10, 0), Error);
}

TEST(Blocks, StreamIsTransparent) {
  SeededUniform rng(65);
  const auto q = quantize_image(random_image(rng));
  for (std::size_t bs : {1ul, 7ul, 4096ul, 16'384ul, 150'528ul, 917'504ul}) {
    const auto plan = plan_blocks(q.size(), bs);
    std::size_t calls = 0, covered = 0;
    const auto out = stream_blocks(q, plan, [&](std::size_t, std::size_t len) {
      ++calls;
      covered += len;
    });
    EXPECT_EQ(out, q);
    EXPECT_EQ(calls, plan.block_count);
    EXPECT_EQ(covered, q.size());
  }
}

TEST(Cost, ReferenceCalibration) {
  const auto r = cost_model(reference_layers(), {3, 224, 224});
  EXPECT_DOUBLE_EQ(r.modeled_latency_ms, 91.9);
  EXPECT_NEAR(r.modeled_energy_mj, 1.845, 0.0005);
  EXPECT_NEAR(r.modeled_energy_mj, 20.08 * 91.9 / 1000.0, 1e-12);
}

TEST(Cost, SmallModels) {
  const auto one = cost_model({LayerSpec::conv1x1(4, 4)}, {4, 7, 7});
  EXPECT_EQ(one.total_macs, 784u);

  EXPECT_NEAR(one.modeled_latency_ms, 91.9 * 784.0 / static_cast<double>(reference_macs()), 1e-12);

  // Latency is linear in MACs.
  const auto twice = cost_model({LayerSpec::conv1x1(4, 4)}, {4, 7, 14});
  EXPECT_EQ(twice.total_macs, 2 * one.total_macs);
  EXPECT_DOUBLE_EQ(twice.modeled_latency_ms, 2 * one.modeled_latency_ms);
}

TEST(RunDetect, ZeroImageZeroBiasFindsNothing) {
  const auto q = zero_bias_model();
  Image gray{224, 224, std::vector<std::uint8_t>(224 * 224 * 3, 128)};
  const auto out = run_detect(q, gray);
  for (auto v : out.raw.values.values()) EXPECT_EQ(v, 0);
  EXPECT_TRUE(out.detections.empty());
}

TEST(RunDetect, BlockSizesGiveIdenticalResults) {
  SeededUniform rng(66);
  const auto q = reference_quantized();
  const auto img = random_image(rng);
  const auto base = run_detect(q, img, {0.0f, 0.5f, 150'528});
  EXPECT_EQ(base.raw.values.shape(), kGridShape);
  EXPECT_LE(base.detections.size(), 98u);
  for (std::size_t bs : {1ul, 4096ul, 16'384ul}) {
    const auto other = run_detect(q, img, {0.0f, 0.5f, bs});
    EXPECT_EQ(other.raw.values, base.raw.values);
    EXPECT_EQ(other.detections, base.detections);
  }
}

TEST(RunDetect, RejectsWrongImageSize) {
  SeededUniform rng(67);
  try {
    run_detect(reference_quantized(), random_image(rng, 32, 32));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Annotate, OnlyOutlinePixelsChange) {
  SeededUniform rng(68);
  const auto img = random_image(rng);
  std::vector<Detection> dets{{0, 0.9f, {10.2f, 20.7f, 100.1f, 60.0f}}, {3, 0.5f, {0, 0, 224, 224}}, {1, 0.3f, {50, 50, 50, 50}}};
  const auto out = draw_detections(img, dets);
  std::vector<bool> outline(224 * 224, false);
  for (const auto& d : dets) {
    const auto r = box_pixels(d.box, 224, 224);
    for (std::size_t y = r.y0; y <= r.y1; ++y) {
      for (std::size_t x = r.x0; x <= r.x1; ++x) {
        if (x == r.x0 || x == r.x1 || y == r.y0 || y == r.y1) outline[y * 224 + x] = true;
      }
    }
  }
  std::size_t changed = 0;
  for (std::size_t i = 0; i < outline.size(); ++i) {
    const bool diff = !std::equal(img.rgb.begin() + 3 * i, img.rgb.begin() + 3 * i + 3, out.rgb.begin() + 3 * i);
    if (diff) {
      EXPECT_TRUE(outline[i]) << "pixel " << i;
      ++changed;
    }
  }
  EXPECT_GT(changed, 0u);
  const auto r = box_pixels(dets[0].box, 224, 224);
  EXPECT_EQ(r.x0, 10u);
  EXPECT_EQ(r.y0, 20u);
  EXPECT_EQ(r.x1, 100u);
  EXPECT_EQ(r.y1, 59u);
}

TEST(Eval, EchoEmptyAndPlanted) {
  const auto dir = fs::temp_directory_path() / "bed_eval_dataset_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SeededUniform rng(69);
  std::string gt;
  std::vector<GroundTruth> truths;
  for (int i = 0; i < 5; ++i) {
    const auto id = "sq" + std::to_string(i);
    write_ppm(dir / (id + ".ppm"), random_image(rng));
    const float x = 20.0f * i;
    truths.push_back({id, i % 5, {x, x, x + 40, x + 40}});
    gt += format_truth(truths.back());
  }
  write_file(dir / "ground_truth.txt", gt);
  const auto ds = load_dataset(dir);
  EXPECT_EQ(ds.image_ids.size(), 5u);
  EXPECT_EQ(ds.truths, truths);

  std::vector<DetectionRecord> echo;
  for (const auto& t : ds.truths) echo.push_back({t.image_id, {t.class_id, 1.0f, t.box}});
  EXPECT_DOUBLE_EQ(evaluate_records(echo, ds.truths, 5).result.mean_ap, 1.0);
  EXPECT_DOUBLE_EQ(evaluate_records({}, ds.truths, 5).result.mean_ap, 0.0);

  // Planted: classes 0..3 found exactly; class 4 answered only by a
  // misplaced box ranked above its hit in another image. AP4 = 1/2.
  auto planted = echo;
  planted[4].det.score = 0.5f;
  planted.push_back({"sq0", {4, 0.9f, {150, 150, 200, 200}}});
  const auto r = evaluate_records(planted, ds.truths, 5).result;
  EXPECT_NEAR(*r.class_ap[4], 0.5, 1e-12);
  EXPECT_NEAR(r.mean_ap, 0.9, 1e-12);

  const auto a = format_eval_report(evaluate_records(planted, ds.truths, 5));
  EXPECT_EQ(a, format_eval_report(evaluate_records(planted, ds.truths, 5)));
  EXPECT_NE(a.find("mAP 0.900000\n"), std::string::npos);

  const auto model_report = run_eval(reference_quantized(), ds);
  EXPECT_EQ(model_report.images, 5u);
  EXPECT_EQ(format_eval_report(model_report), format_eval_report(run_eval(reference_quantized(), ds)));
  fs::remove_all(dir);

  fs::create_directories(dir);
  try {
    load_dataset(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyDataset);
  }
  fs::remove_all(dir);
}
