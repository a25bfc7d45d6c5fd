#include <gtest/gtest.h>

#include <cmath>

#include "fracdet/error.hpp"
#include "fracdet/layers.hpp"
#include "gradcheck_suites.hpp"

using namespace fracdet;

TEST(Conv3x3, IdentityKernel) {
  std::mt19937_64 rng(1);
  const Tensor x = gradcheck::uniform({1, 6, 5}, rng);
  Tensor w({1, 1, 3, 3});
  w[4] = 1.0f;
  EXPECT_EQ(nn::conv3x3_forward(x, w, Tensor({1})), x);
}

TEST(Conv3x3, ZeroWeightsGiveBias) {
  std::mt19937_64 rng(2);
  const Tensor x = gradcheck::uniform({2, 4, 4}, rng);
  const Tensor y = nn::conv3x3_forward(x, Tensor({3, 2, 3, 3}), Tensor({3}, std::vector<float>{0.5f, -1.0f, 2.0f}));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y[c * 16 + i], (std::array<float, 3>{0.5f, -1.0f, 2.0f}[c]));
  }
}

TEST(Conv3x3, ZeroPaddingAtBorder) {
  // All-ones input and kernel: corner sees 4 taps, edge 6, interior 9.
  const Tensor y = nn::conv3x3_forward(Tensor({1, 3, 3}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}));
  EXPECT_EQ(y.values()[0], 4.0f);
  EXPECT_EQ(y.values()[1], 6.0f);
  EXPECT_EQ(y.values()[4], 9.0f);
}

TEST(Conv3x3, ShapeMismatch) {
  EXPECT_THROW(nn::conv3x3_forward(Tensor({2, 4, 4}), Tensor({3, 1, 3, 3}), Tensor({3})), Error);
  EXPECT_THROW(nn::conv3x3_forward(Tensor({2, 4, 4}), Tensor({3, 2, 3, 3}), Tensor({2})), Error);
}

TEST(MaxPool, SingleWindow) {
  const Tensor x({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_EQ(nn::maxpool2x2_forward(x)[0], 4.0f);
  const Tensor dx = nn::maxpool2x2_backward(x, Tensor({1, 1, 1}, 1.0f));
  EXPECT_EQ(dx, Tensor({1, 2, 2}, std::vector<float>{0, 0, 0, 1}));
}

TEST(MaxPool, TieGoesToFirstInScan) {
  const Tensor x({1, 2, 2}, 3.0f);
  const Tensor dx = nn::maxpool2x2_backward(x, Tensor({1, 1, 1}, 2.0f));
  EXPECT_EQ(dx, Tensor({1, 2, 2}, std::vector<float>{2, 0, 0, 0}));
}

TEST(Relu, Values) {
  const Tensor y = nn::relu_forward(Tensor({2}, std::vector<float>{-1.0f, 2.0f}));
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 2.0f);
}

TEST(Dense, IdentityWeights) {
  Tensor w({3, 3});
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0f;
  const Tensor x({3}, std::vector<float>{0.25f, -7.0f, 3.5f});
  EXPECT_EQ(nn::dense_forward(x, w, Tensor({3})), x);
}

TEST(GlobalAvgPool, ConstantPlane) {
  const Tensor y = nn::global_avg_pool_forward(Tensor({2, 3, 3}, 0.75f));
  EXPECT_EQ(y, Tensor({2}, 0.75f));
}

TEST(SoftmaxCE, EqualLogits) {
  const auto r = nn::softmax_ce_forward(Tensor({2}), 0);
  EXPECT_FLOAT_EQ(r.probabilities[0], 0.5f);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(SoftmaxCE, ConfidentLogits) {
  const auto r = nn::softmax_ce_forward(Tensor({2}, std::vector<float>{10.0f, -10.0f}), 0);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(r.loss, 2.06e-9, 0.01e-9);
}

TEST(SoftmaxCE, LargeLogitsDoNotOverflow) {
  const auto r = nn::softmax_ce_forward(Tensor({2}, std::vector<float>{1e4f, -1e4f}), 1);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 2e4, 1e-6);
  EXPECT_TRUE(r.probabilities.all_finite());
}

TEST(SoftmaxCE, LabelOutOfRange) { EXPECT_THROW(nn::softmax_ce_forward(Tensor({2}), 2), Error); }

TEST(Softmax, NormalizesRandomLogits) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    Tensor l = gradcheck::uniform({6}, rng);
    for (auto& v : l.values()) v *= 30.0f;
    const Tensor p = nn::softmax(l);
    double s = 0.0;
    for (float v : p.values()) {
      EXPECT_GT(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::mt19937_64 rng(3);
  std::vector<Tensor> params{gradcheck::uniform({50}, rng)};
  std::vector<Tensor> grads{gradcheck::uniform({50}, rng)};
  const Tensor before = params[0];
  nn::Adam adam({}, params);
  adam.step(params, grads);
  const float lr = 0.0005f;
  for (std::size_t i = 0; i < 50; ++i) {
    const float delta = params[0][i] - before[i];
    EXPECT_LE(std::abs(delta), lr * 1.0001f);
    EXPECT_GE(std::abs(delta), 0.99f * lr * 0.9999f);
    EXPECT_EQ(std::signbit(delta), !std::signbit(grads[0][i]));
  }
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(4);
  std::vector<Tensor> params{gradcheck::uniform({3, 4}, rng)};
  const Tensor before = params[0];
  std::vector<Tensor> grads{Tensor({3, 4})};
  nn::Adam adam({}, params);
  for (int i = 0; i < 100; ++i) adam.step(params, grads);
  EXPECT_EQ(params[0], before);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    std::mt19937_64 rng(5);
    std::vector<Tensor> params{gradcheck::uniform({20}, rng)};
    nn::Adam adam({}, params);
    for (int i = 0; i < 30; ++i) {
      std::vector<Tensor> g{gradcheck::uniform({20}, rng)};
      adam.step(params, g);
    }
    return params[0];
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatch) {
  std::vector<Tensor> params{Tensor({3})};
  nn::Adam adam({}, params);
  std::vector<Tensor> grads{Tensor({4})};
  EXPECT_THROW(adam.step(params, grads), Error);
}

TEST(GradCheck, LinearFunctionIsExactUpToRoundoff) {
  std::mt19937_64 rng(6);
  const Tensor x = gradcheck::uniform({10}, rng), r = gradcheck::uniform({10}, rng);
  const double err = nn::finite_difference_check([&](const Tensor& p) { return gradcheck::dot(r, p); }, x, r);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, DetectsWrongGradient) {
  std::mt19937_64 rng(7);
  const Tensor x = gradcheck::uniform({10}, rng), r = gradcheck::uniform({10}, rng);
  Tensor wrong = r;
  wrong[3] += 0.5f;
  EXPECT_GT(nn::finite_difference_check([&](const Tensor& p) { return gradcheck::dot(r, p); }, x, wrong), 0.1);
  Tensor slightly = r;
  slightly[5] += 0.005f;
  EXPECT_GT(nn::finite_difference_check([&](const Tensor& p) { return gradcheck::dot(r, p); }, x, slightly), 1e-2);
}

TEST(GradCheck, ReluAwayFromZero) {
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_LT(gradcheck::relu(s), 1e-3);
}

TEST(GradCheck, EveryLayerWithinTolerance) {
  for (const auto& suite : gradcheck::suites()) {
    EXPECT_LT(gradcheck::worst_over(suite, 10), 1e-2) << suite.name;
  }
}

TEST(GradCheck, SoftmaxCEWithinTighterTolerance) {
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_LT(gradcheck::softmax_ce(s), 1e-3);
}
