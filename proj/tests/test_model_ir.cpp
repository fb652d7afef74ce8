#include <gtest/gtest.h>

#include "bed/bed.hpp"
#include "test_support.hpp"

using namespace bed;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::Io;
}

}  // namespace

TEST(InferShapes, FivePoolStagesReachSevenBySeven) {
  ModelGraph m;
  m.input_shape = {3, 224, 224};
  SeededUniform rng(1);
  std::size_t ch = 3;
  for (int i = 0; i < 5; ++i) {
    m.add(LayerSpec::conv3x3(ch, 8), random_weights(LayerSpec::conv3x3(ch, 8), rng));
    ch = 8;
    m.add(LayerSpec::max_pool(ch));
  }
  const auto shapes = infer_shapes(m);
  EXPECT_EQ(shapes.back(), (Shape{8, 7, 7}));
}

TEST(InferShapes, PaddedConvKeepsSize) {
  ModelGraph m;
  m.input_shape = {3, 8, 8};
  m.add(LayerSpec::conv3x3(3, 5));
  EXPECT_EQ(infer_shapes(m).back(), (Shape{5, 8, 8}));
}

TEST(InferShapes, ConvThenPool) {
  ModelGraph m;
  m.input_shape = {3, 6, 6};
  m.add(LayerSpec::conv3x3(3, 4));
  m.add(LayerSpec::max_pool(4));
  EXPECT_EQ(infer_shapes(m).back(), (Shape{4, 3, 3}));
}

TEST(InferShapes, Errors) {
  ModelGraph chain;
  chain.input_shape = {3, 8, 8};
  chain.add(LayerSpec::conv3x3(3, 4));
  chain.add(LayerSpec::conv1x1(5, 2));
  EXPECT_EQ(code_of([&] { infer_shapes(chain); }), Errc::ChannelMismatch);

  ModelGraph odd;
  odd.input_shape = {3, 6, 6};
  odd.add(LayerSpec::max_pool(3));
  odd.add(LayerSpec::max_pool(3));
  EXPECT_EQ(code_of([&] { infer_shapes(odd); }), Errc::OddSpatialDim);

  ModelGraph first;
  first.input_shape = {1, 4, 4};
  first.add(LayerSpec::conv1x1(3, 2));
  EXPECT_EQ(code_of([&] { infer_shapes(first); }), Errc::ChannelMismatch);
}

TEST(ValidateOperators, Whitelist) {
  EXPECT_TRUE(validate_operators(build_reference_model()).empty());

  ModelGraph m;
  m.input_shape = {3, 8, 8};
  LayerSpec five_by_five = LayerSpec::conv3x3(3, 3);
  five_by_five.kind = static_cast<LayerKind>(7);
  m.add(five_by_five);
  EXPECT_EQ(validate_operators(m).size(), 1u);

  ModelGraph p;
  p.input_shape = {3, 8, 8};
  LayerSpec wide_pad = LayerSpec::conv3x3(3, 3);
  wide_pad.padding = 2;
  p.add(wide_pad);
  const auto v = validate_operators(p);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].layer, 0u);
}

TEST(WeightBytes, Counts) {
  ModelGraph m;
  m.input_shape = {4, 7, 7};
  m.add(LayerSpec::conv1x1(4, 4));
  EXPECT_EQ(weight_bytes_quantized(m), 32u);

  ModelGraph pools;
  pools.input_shape = {4, 8, 8};
  pools.add(LayerSpec::max_pool(4));
  pools.add(LayerSpec::avg_pool(4));
  EXPECT_EQ(weight_bytes_quantized(pools), 0u);

  const auto ref = weight_bytes_quantized(build_reference_model());
  EXPECT_GE(ref, 295'000u);
  EXPECT_LE(ref, 310'000u);
  EXPECT_LE(ref, kWeightBudgetBytes);
}

TEST(ActivationPeak, Boundaries) {
  ModelGraph empty;
  empty.input_shape = {3, 224, 224};
  EXPECT_EQ(activation_peak_bytes(empty), 150'528u);

  ModelGraph wide = empty;
  wide.add(LayerSpec::conv3x3(3, 16));
  EXPECT_EQ(activation_peak_bytes(wide), 953'344u);
  const auto report = check_constraints(wide);
  EXPECT_FALSE(report.activations_fit());
  EXPECT_FALSE(report.passed());
}

TEST(Constraints, ReferencePasses) {
  const auto m = build_reference_model();
  const auto r = check_constraints(m);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(output_shape(m), (Shape{15, 7, 7}));
  std::size_t pools = 0;
  for (const auto& l : m.layers) pools += l.kind == LayerKind::MaxPool2x2;
  EXPECT_EQ(pools, 5u);
  EXPECT_EQ(m.layers.back().kind, LayerKind::Conv1x1);
}

TEST(Constraints, WeightFailureIsMonotone) {
  ModelGraph m;
  m.input_shape = {64, 8, 8};
  for (int i = 0; i < 12; ++i) m.add(LayerSpec::conv3x3(64, 64));  // 12 * (36864 + 256) > budget
  ASSERT_FALSE(check_constraints(m).weights_fit());
  for (auto extra : {LayerSpec::max_pool(64), LayerSpec::conv1x1(64, 1)}) {
    m.add(extra);
    EXPECT_FALSE(check_constraints(m).weights_fit());
  }
}

TEST(Constraints, ShapeFailureBecomesViolation) {
  ModelGraph m;
  m.input_shape = {3, 7, 7};
  m.add(LayerSpec::max_pool(3));
  const auto r = check_constraints(m);
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.operator_violations.size(), 1u);
}

TEST(FoldBatchNorm, IdentityAndScale) {
  SeededUniform rng(5);
  ModelGraph m;
  m.input_shape = {2, 4, 4};
  auto spec = LayerSpec::conv3x3(2, 3, false, true);
  auto w = random_weights(spec, rng);
  w.batchnorm = BatchNormParams{{1, 1, 1}, {0, 0, 0}, {0, 0, 0}, {1, 1, 1}, 0.0f};
  m.add(spec, w);
  auto folded = fold_batchnorm(m);
  EXPECT_FALSE(folded.layers[0].has_batchnorm);
  EXPECT_EQ(folded.weights[0].weights, w.weights);
  EXPECT_EQ(folded.weights[0].bias, w.bias);

  m.weights[0].batchnorm->gamma = {2, 2, 2};
  folded = fold_batchnorm(m);
  for (std::size_t i = 0; i < w.weights.size(); ++i) EXPECT_EQ(folded.weights[0].weights[i], 2 * w.weights[i]);
  for (std::size_t i = 0; i < w.bias.size(); ++i) EXPECT_EQ(folded.weights[0].bias[i], 2 * w.bias[i]);
}

TEST(FoldBatchNorm, MissingParams) {
  ModelGraph m;
  m.input_shape = {1, 4, 4};
  m.add(LayerSpec::conv1x1(1, 1, false, true), LayerWeights{{1.0f}, {0.0f}, std::nullopt});
  EXPECT_EQ(code_of([&] { fold_batchnorm(m); }), Errc::MissingBNParams);
}

TEST(FoldBatchNorm, PreservesFloatForward) {
  SeededUniform rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = testkit::random_model(rng, 4, 8, 2 * (1 + rng.below(8)));
    const auto folded = fold_batchnorm(m);
    for (int k = 0; k < 10; ++k) {
      const auto x = testkit::random_tensor(m.input_shape, rng);
      const auto a = forward_float(m, x);
      const auto b = forward_float(folded, x);
      ASSERT_EQ(a.shape(), b.shape());
      double scale = 0;
      for (float v : a.values()) scale = std::max(scale, std::fabs(static_cast<double>(v)));
      for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_LE(std::fabs(static_cast<double>(a[i]) - b[i]), 1e-5 * std::max(1.0, scale)) << "trial " << trial;
      }
    }
  }
}

TEST(ReferenceModel, DeterministicPerSeed) {
  EXPECT_EQ(build_reference_model(3), build_reference_model(3));
  EXPECT_NE(build_reference_model(3).weights, build_reference_model(4).weights);
}
