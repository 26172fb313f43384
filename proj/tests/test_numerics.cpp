#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "cbert/gradcheck.hpp"
#include "cbert/ops.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

namespace cbert {
namespace {

using test::project_to_scalar;
using test::random_param;
using D = Var<double>;

constexpr double kTol = 1e-4;
constexpr double kEps = 1e-5;

D mat(std::size_t r, std::size_t c, std::vector<double> v) {
  return D::parameter(Tensor<double>::matrix(r, c, std::move(v)));
}
D vec(std::vector<double> v) { return D::parameter(Tensor<double>::vector(std::move(v))); }

// Nested-loop conv reference with the same accumulation order as the kernel.
template <typename T>
Tensor<T> conv_reference(const Tensor<T>& seq, const Tensor<T>& k,
                         const Tensor<T>& bias) {
  const std::size_t steps = seq.rows(), cin = seq.cols();
  const std::size_t cout = k.shape()[0], w = k.shape()[1];
  Tensor<T> out({steps - w + 1, cout});
  for (std::size_t t = 0; t + w <= steps; ++t) {
    for (std::size_t c = 0; c < cout; ++c) {
      T acc = bias[c];
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < cin; ++j)
          acc += seq(t + i, j) * k[(c * w + i) * cin + j];
      out(t, c) = acc;
    }
  }
  return out;
}

TEST(Conv1d, SlidingSum) {
  auto seq = mat(4, 1, {1, 2, 3, 4});
  auto k = D::parameter(Tensor<double>({1, 2, 1}, {1, 1}));
  auto out = ops::conv1d_valid(seq, k, vec({0}));
  EXPECT_EQ(out.value().storage(), (std::vector<double>{3, 5, 7}));
}

TEST(Conv1d, PointwiseAffine) {
  auto out = ops::conv1d_valid(mat(2, 1, {1, 2}),
                               D::parameter(Tensor<double>({1, 1, 1}, {2})), vec({1}));
  EXPECT_EQ(out.value().storage(), (std::vector<double>{3, 5}));
}

TEST(Conv1d, MatchesNestedLoopOracleExactly) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t steps = 3 + rng.index(8), cin = 1 + rng.index(4);
    const std::size_t w = 1 + rng.index(steps), cout = 1 + rng.index(5);
    auto seq = test::random_tensor<float>({steps, cin}, rng);
    auto k = test::random_tensor<float>({cout, w, cin}, rng);
    auto b = test::random_tensor<float>({cout}, rng);
    auto out = ops::conv1d_valid(Var<float>(seq), Var<float>(k), Var<float>(b));
    EXPECT_EQ(out.value(), conv_reference(seq, k, b)) << "seed " << seed;
  }
  Rng rng(99);
  auto seq = test::random_tensor({5, 2}, rng);
  auto k = test::random_tensor({2, 3, 2}, rng);
  auto b = test::random_tensor({2}, rng);
  auto out = ops::conv1d_valid(D(seq), D(k), D(b));
  EXPECT_EQ(out.shape(), (Shape{3, 2}));
  EXPECT_EQ(out.value(), conv_reference(seq, k, b));
}

TEST(Conv1d, ShorterThanFilterIsLengthError) {
  EXPECT_THROW(ops::conv1d_valid(mat(2, 1, {1, 2}),
                                 D::parameter(Tensor<double>({1, 3, 1}, {1, 1, 1})),
                                 vec({0})),
               LengthError);
}

TEST(MaxOverTime, PicksChannelMaxima) {
  auto out = ops::max_over_time(mat(3, 2, {1, 5, 2, 4, 3, 3}));
  EXPECT_EQ(out.value().storage(), (std::vector<double>{3, 5}));
  auto constant = ops::max_over_time(mat(3, 2, {7, -1, 7, -1, 7, -1}));
  EXPECT_EQ(constant.value().storage(), (std::vector<double>{7, -1}));
}

TEST(MaxOverTime, TieRoutesGradientToEarliestRow) {
  auto x = mat(3, 1, {2, 5, 5});
  ops::sum(ops::max_over_time(x)).backward();
  EXPECT_EQ(x.grad().storage(), (std::vector<double>{0, 1, 0}));
}

TEST(MaxOverTime, GradCheckAtTiePreservingPerturbations) {
  // Channel 1 ties between rows 0 and 1; only the untied channel is
  // perturbed numerically, the tied one is checked against the tie rule.
  auto untied = mat(3, 1, {1.0, 3.0, 2.0});
  auto tied = mat(3, 1, {4.0, 4.0, 0.5});
  auto loss = [&] {
    return project_to_scalar(ops::max_over_time(ops::concat_cols<double>({untied, tied})), 3);
  };
  auto report = grad_check(loss, {{"untied", untied}}, {kEps, kTol});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  tied.zero_grad();
  loss().backward();
  EXPECT_NE(tied.grad()[0], 0.0);
  EXPECT_EQ(tied.grad()[1], 0.0);
  EXPECT_EQ(tied.grad()[2], 0.0);
}

TEST(MaxOverTime, EmptyIsLengthError) {
  EXPECT_THROW(ops::max_over_time(D(Tensor<double>())), LengthError);
}

TEST(LayerNorm, ZeroVarianceGivesBeta) {
  auto out = ops::layer_norm(vec({1, 1, 1}), vec({1, 1, 1}), vec({0, 0, 0}), 1e-12);
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, StandardizedInputIsFixedPoint) {
  auto out = ops::layer_norm(vec({1, -1}), vec({1, 1}), vec({0, 0}), 1e-12);
  EXPECT_NEAR(out.value()[0], 1.0, 1e-10);
  EXPECT_NEAR(out.value()[1], -1.0, 1e-10);
}

TEST(LayerNorm, BiasedVariance) {
  auto out = ops::layer_norm(vec({2, 4, 6}), vec({1, 1, 1}), vec({0, 0, 0}), 0.0);
  EXPECT_NEAR(out.value()[0], -1.224745, 1e-6);
  EXPECT_NEAR(out.value()[1], 0.0, 1e-12);
  EXPECT_NEAR(out.value()[2], 1.224745, 1e-6);
}

TEST(SoftmaxCrossEntropy, KnownValues) {
  auto uniform = ops::cross_entropy(mat(1, 4, {0.3, 0.3, 0.3, 0.3}), {2});
  EXPECT_NEAR(uniform.value()[0], std::log(4.0), 1e-12);
  auto confident = ops::cross_entropy(mat(1, 3, {1000, 0, 0}), {0});
  EXPECT_NEAR(confident.value()[0], 0.0, 1e-12);
  auto two = ops::cross_entropy(mat(1, 2, {1, 2}), {0});
  EXPECT_NEAR(two.value()[0], 1.313262, 1e-6);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  auto logits = mat(1, 2, {1, 2});
  ops::cross_entropy(logits, {0}).backward();
  const double p0 = 1.0 / (1.0 + std::exp(1.0));
  EXPECT_NEAR(logits.grad()[0], p0 - 1.0, 1e-12);
  EXPECT_NEAR(logits.grad()[1], 1.0 - p0, 1e-12);
}

TEST(SoftmaxCrossEntropy, TargetOutOfRange) {
  EXPECT_THROW(ops::cross_entropy(mat(1, 2, {1, 2}), {2}), IndexError);
}

TEST(Softmax, MaskedColumnsGetZeroWeight) {
  auto out = ops::softmax(mat(1, 3, {1, 50, 2}), {1, 0, 1});
  EXPECT_EQ(out.value()[1], 0.0);
  EXPECT_NEAR(out.value()[0] + out.value()[2], 1.0, 1e-12);
}

TEST(Dropout, RateZeroAndEvalAreIdentity) {
  Rng rng(1);
  auto x = mat(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(ops::dropout(x, 0.0, rng, true).value(), x.value());
  EXPECT_EQ(ops::dropout(x, 0.5, rng, false).value(), x.value());
  EXPECT_THROW(ops::dropout(x, 1.0, rng, true), ConfigError);
}

TEST(Dropout, InvertedScaling) {
  Rng rng(5);
  Tensor<double> ones({1, 20000}, 1.0);
  auto out = ops::dropout(D(ones), 0.25, rng, true);
  double total = 0;
  for (double v : out.value().data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 4.0 / 3.0) < 1e-12);
    total += v;
  }
  EXPECT_NEAR(total / 20000.0, 1.0, 0.03);
}

TEST(GradCheck, LinearFunctionIsExact) {
  auto w = vec({0.3, -1.2, 2.5});
  auto loss = [&] {
    return ops::sum(ops::mul(w, D::constant(Tensor<double>::vector({1.5, -2, 0.25}))));
  };
  auto report = grad_check(loss, {{"w", w}}, {kEps, kTol});
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, NonFiniteLossThrows) {
  auto w = vec({1.0});
  auto loss = [&] {
    return ops::scale(ops::sum(w), std::numeric_limits<double>::infinity());
  };
  EXPECT_THROW(grad_check(loss, {{"w", w}}), NumericError);
}


TEST(GradCheck, EveryPrimitiveOverTenSeeds) {
  for (const auto& c : test::primitive_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1000 * seed + 17);
      auto [loss, params] = c.build(rng);
      auto report = grad_check(loss, params, {kEps, kTol});
      EXPECT_TRUE(report.passed)
          << c.name << " seed " << seed << " max rel err " << report.max_rel_error;
    }
  }
}

TEST(Forward, FiniteInputsGiveFiniteOutputs) {
  Rng rng(3);
  auto x = random_param({4, 6}, rng, 50.0);
  for (const D& y : {ops::gelu(x), ops::sigmoid(x), ops::tanh(x), ops::relu(x),
                     ops::softmax(x), ops::layer_norm(x, random_param({6}, rng),
                                                      random_param({6}, rng), 1e-12)}) {
    for (double v : y.value().data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>({0, 2}), ShapeError);
}

}  // namespace
}  // namespace cbert
