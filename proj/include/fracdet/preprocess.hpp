#pragma once

#include <limits>
#include <optional>

#include "fracdet/image.hpp"
#include "fracdet/tensor.hpp"

namespace fracdet {

struct ClaheConfig {
  int tile_rows = 8;
  int tile_cols = 8;
  // Multiple of the mean bin height (pixels / 256). Infinity disables clipping.
  double clip_factor = 2.0;

  static constexpr double kNoClip = std::numeric_limits<double>::infinity();
};

// Contrast-limited adaptive histogram equalization.
//
// The image is cut into tile_rows x tile_cols tiles along integer boundaries
// (row i spans [i*H/rows, (i+1)*H/rows)). Each tile's 256-bin histogram is
// clipped at floor(clip_factor * n / 256) (at least 1), the clipped excess is
// spread uniformly over all bins with the remainder handed out from bin 0
// upward, and the tile mapping is round(255 * cdf(v) / n). Output pixels blend
// the four nearest tile-center mappings bilinearly, clamping at the borders.
PixelGrid8 clahe(const PixelGrid8& img, const ClaheConfig& cfg = {});

struct OtsuResult {
  int threshold = 0;
  double between_class_variance = 0.0;
};

// Smallest t in [0, 254] maximizing w0*w1*(mu0-mu1)^2 with class 0 = {v <= t}.
// Throws kDegenerateHistogram when fewer than two distinct levels occur.
OtsuResult otsu_threshold(const PixelGrid8& img);

// v > threshold -> 255, else 0.
PixelGrid8 binarize(const PixelGrid8& img, int threshold);

struct CannyConfig {
  double gaussian_sigma = 1.0;  // 5x5 kernel, reflect padding
  double low_frac = 0.10;       // of the maximum gradient magnitude
  double high_frac = 0.20;
};

struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<float> magnitude;
  std::vector<std::uint8_t> direction;  // 0: 0deg, 1: 45deg, 2: 90deg, 3: 135deg
};

// Blur + Sobel stages of the edge detector, exposed for tests.
PixelGrid32 gaussian_blur5(const PixelGrid8& img, double sigma);
GradientField sobel_gradients(const PixelGrid32& img);

// Binary {0, 255} edge map. Border pixels are never edges.
PixelGrid8 canny(const PixelGrid8& img, const CannyConfig& cfg = {});

struct PipelineConfig {
  ClaheConfig clahe;
  CannyConfig canny;
  int target_width = 224;
  int target_height = 224;
};

struct PipelineOutput {
  Tensor model_input;  // (3, target_height, target_width), values in [0, 1]
  PixelGrid8 enhanced;
  PixelGrid8 mask;
  PixelGrid8 edges;
  PixelGrid8 resized;  // grayscale original at the target size
  std::optional<int> otsu_threshold;
  bool degenerate_histogram = false;
};

// grayscale -> CLAHE at native resolution -> resize -> normalize -> replicate.
// A constant image yields an all-zero mask and sets degenerate_histogram.
PipelineOutput run_pipeline(const ColorImage& img, const PipelineConfig& cfg = {});

// Model input only; skips the Otsu and Canny panels.
Tensor model_input(const ColorImage& img, const PipelineConfig& cfg);

// Enhanced, mask and edges side by side.
PixelGrid8 triptych(const PipelineOutput& out);

}  // namespace fracdet
