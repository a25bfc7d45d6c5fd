#include <gtest/gtest.h>

#include <cmath>

#include "fracdet/error.hpp"
#include "fracdet/preprocess.hpp"
#include "oracles.hpp"

using namespace fracdet;

namespace {

PixelGrid8 step_image(int size) {
  PixelGrid8 img(size, size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = size / 2; x < size; ++x) img.at(x, y) = 255;
  }
  return img;
}

int max_abs_diff(const PixelGrid8& a, const PixelGrid8& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) d = std::max(d, std::abs(a.values[i] - b.values[i]));
  return d;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

}  // namespace

TEST(Clahe, UnclippedSingleTileIsHistogramEqualization) {
  const ClaheConfig cfg{1, 1, ClaheConfig::kNoClip};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PixelGrid8 img = oracle::smooth_image(40 + static_cast<int>(seed), 33, seed);
    EXPECT_LE(max_abs_diff(clahe(img, cfg), oracle::histogram_equalize(img)), 1) << seed;
  }
}

PixelGrid8 narrow_ramp(int size) {
  PixelGrid8 img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) img.at(x, y) = static_cast<std::uint8_t>(100 + (x * 31) / size);
  }
  return img;
}

int dynamic_range(const PixelGrid8& img) {
  const auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
  return *hi - *lo;
}

TEST(Clahe, WidensNarrowRamp) {
  const PixelGrid8 img = narrow_ramp(64);
  ASSERT_EQ(dynamic_range(img), 30);
  const PixelGrid8 single = clahe(img, {1, 1, ClaheConfig::kNoClip});
  EXPECT_EQ(dynamic_range(single), dynamic_range(oracle::histogram_equalize(img)));
  EXPECT_GT(dynamic_range(single), 30);
  EXPECT_GT(dynamic_range(clahe(narrow_ramp(256))), 30);
}

TEST(Clahe, TooSmallForGrid) {
  EXPECT_EQ(code_of([] { clahe(PixelGrid8(4, 20)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { clahe(PixelGrid8(20, 20), {0, 8, 2.0}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { clahe(PixelGrid8(20, 20), {8, 8, -1.0}); }), ErrorCode::kInvalidArgument);
}

TEST(Clahe, ConstantImageStaysConstant) {
  const PixelGrid8 out = clahe(PixelGrid8(50, 37, 90));
  EXPECT_TRUE(std::all_of(out.values.begin(), out.values.end(), [&](auto v) { return v == out.values[0]; }));
}

TEST(Otsu, HalfAndHalfPicksSmallestMaximizer) {
  PixelGrid8 img(10, 10, 10);
  for (int i = 0; i < 50; ++i) img.values[i] = 200;
  EXPECT_EQ(otsu_threshold(img).threshold, 10);
  EXPECT_EQ(oracle::otsu(img), 10);
  const PixelGrid8 mask = binarize(img, 10);
  for (std::size_t i = 0; i < img.values.size(); ++i) EXPECT_EQ(mask.values[i], img.values[i] == 200 ? 255 : 0);
}

TEST(Otsu, MatchesExhaustiveOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const PixelGrid8 img = oracle::random_image(32, 32, seed);
    EXPECT_EQ(otsu_threshold(img).threshold, oracle::otsu(img)) << seed;
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PixelGrid8 img = oracle::bimodal_image(32, 32, 40 + 5 * static_cast<int>(seed), 180, 12.0, seed);
    EXPECT_EQ(otsu_threshold(img).threshold, oracle::otsu(img)) << seed;
  }
}

TEST(Otsu, ConstantImageIsDegenerate) {
  EXPECT_EQ(code_of([] { otsu_threshold(PixelGrid8(8, 8, 77)); }), ErrorCode::kDegenerateHistogram);
}

TEST(Otsu, TwoLevelsSplitBetweenThem) {
  PixelGrid8 img(4, 1);
  img.values = {3, 3, 250, 250};
  const OtsuResult r = otsu_threshold(img);
  EXPECT_EQ(r.threshold, 3);
  EXPECT_GT(r.between_class_variance, 0.0);
}

TEST(Binarize, EdgeThresholds) {
  const PixelGrid8 img = oracle::random_image(16, 16, 1);
  const PixelGrid8 none = binarize(img, 255);
  EXPECT_TRUE(std::all_of(none.values.begin(), none.values.end(), [](auto v) { return v == 0; }));
  const PixelGrid8 some = binarize(img, 128);
  EXPECT_TRUE(std::all_of(some.values.begin(), some.values.end(), [](auto v) { return v == 0 || v == 255; }));
  EXPECT_THROW(binarize(img, 256), Error);
}

TEST(Canny, ConstantImageHasNoEdges) {
  const PixelGrid8 e = canny(PixelGrid8(32, 32, 128));
  EXPECT_TRUE(std::all_of(e.values.begin(), e.values.end(), [](auto v) { return v == 0; }));
}

TEST(Canny, VerticalStepGivesOneColumn) {
  const PixelGrid8 e = canny(step_image(64));
  int column = -1;
  for (int y = 1; y < 63; ++y) {
    int count = 0;
    for (int x = 0; x < 64; ++x) {
      if (e.at(x, y) == 255) {
        ++count;
        if (column < 0) column = x;
        EXPECT_EQ(x, column);
      }
    }
    EXPECT_EQ(count, 1) << "row " << y;
  }
  EXPECT_TRUE(column == 31 || column == 32);
  for (int x = 0; x < 64; ++x) {
    EXPECT_EQ(e.at(x, 0), 0);
    EXPECT_EQ(e.at(x, 63), 0);
  }
}

TEST(Canny, OutputIsBinaryAndBorderFree) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PixelGrid8 e = canny(oracle::smooth_image(48, 40, seed));
    for (int y = 0; y < e.height; ++y) {
      for (int x = 0; x < e.width; ++x) {
        const auto v = e.at(x, y);
        ASSERT_TRUE(v == 0 || v == 255);
        if (x == 0 || y == 0 || x == e.width - 1 || y == e.height - 1) ASSERT_EQ(v, 0);
      }
    }
  }
}

// Retained pixels are local maxima along their quantized gradient direction.
TEST(Canny, SuppressionLeavesNoDoubleAlongGradient) {
  static constexpr int kDx[4] = {1, 1, 0, -1};
  static constexpr int kDy[4] = {0, 1, 1, 1};
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const PixelGrid8 img = oracle::smooth_image(64, 64, seed + 100);
    const PixelGrid8 e = canny(img);
    const GradientField g = sobel_gradients(gaussian_blur5(img, 1.0));
    for (int y = 1; y < 63; ++y) {
      for (int x = 1; x < 63; ++x) {
        if (e.at(x, y) != 255) continue;
        const int d = g.direction[y * 64 + x];
        const float m = g.magnitude[y * 64 + x];
        EXPECT_GE(m, g.magnitude[(y + kDy[d]) * 64 + x + kDx[d]]);
        EXPECT_GT(m, g.magnitude[(y - kDy[d]) * 64 + x - kDx[d]]);
        const int ax = x + kDx[d], ay = y + kDy[d];
        if (e.at(ax, ay) == 255 && g.direction[ay * 64 + ax] == d) {
          ADD_FAILURE() << "adjacent edge pixels along direction " << d << " at " << x << "," << y;
        }
      }
    }
  }
}

TEST(Canny, RotationCovariance) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const PixelGrid8 img = oracle::smooth_image(48, 48, seed + 7);
    const PixelGrid8 a = oracle::rotate90(canny(img));
    const PixelGrid8 b = canny(oracle::rotate90(img));
    std::size_t interior = 0, agree = 0;
    for (int y = 1; y < 47; ++y) {
      for (int x = 1; x < 47; ++x) {
        ++interior;
        agree += a.at(x, y) == b.at(x, y);
      }
    }
    EXPECT_GE(static_cast<double>(agree) / interior, 0.99) << seed;
  }
}

TEST(Canny, RejectsBadInputs) {
  EXPECT_EQ(code_of([] { canny(PixelGrid8(4, 10)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { canny(PixelGrid8(10, 10), {1.0, 0.3, 0.2}); }), ErrorCode::kInvalidArgument);
}

TEST(Pipeline, ShapesAndRanges) {
  ColorImage img(100, 80);
  const PixelGrid8 gray = oracle::smooth_image(100, 80, 3);
  for (std::size_t i = 0; i < gray.values.size(); ++i) {
    for (int c = 0; c < 3; ++c) img.values[i * 3 + c] = gray.values[i];
  }
  const PipelineOutput out = run_pipeline(img);
  EXPECT_EQ(out.model_input.shape(), (Shape{3, 224, 224}));
  for (float v : out.model_input.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_EQ(out.enhanced, clahe(to_grayscale(img)));
  EXPECT_EQ(out.edges, canny(out.enhanced));
  EXPECT_EQ(out.mask, binarize(out.enhanced, otsu_threshold(out.enhanced).threshold));
  EXPECT_FALSE(out.degenerate_histogram);
  EXPECT_EQ(out.model_input, model_input(img, {}));
  for (auto v : out.mask.values) ASSERT_TRUE(v == 0 || v == 255);
}

TEST(Pipeline, ConstantImageFlagsDegenerateMask) {
  ColorImage img(64, 64);
  std::fill(img.values.begin(), img.values.end(), 140);
  const PipelineOutput out = run_pipeline(img);
  EXPECT_TRUE(out.degenerate_histogram);
  EXPECT_FALSE(out.otsu_threshold.has_value());
  EXPECT_TRUE(std::all_of(out.mask.values.begin(), out.mask.values.end(), [](auto v) { return v == 0; }));
}
