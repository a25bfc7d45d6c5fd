#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "fracdet/image.hpp"
#include "fracdet/model.hpp"

namespace fracdet {

// Values in [0, 1] at the target layer's spatial resolution. The maximum is 1
// unless the map is identically zero.
struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::size_t target_layer = 0;
  std::size_t class_idx = 0;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  // Row-major argmax, first occurrence wins.
  std::pair<int, int> argmax() const;
  bool is_zero() const;
};

// L = ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of dy_c/dA_k,
// divided by its maximum when that is positive.
Heatmap grad_cam_from(const Tensor& activation, const Tensor& gradient);

// Defaults to the last convolution layer. Uses the pre-softmax logit of
// `class_idx` as the score.
Heatmap grad_cam(const Model& model, const Tensor& input, std::size_t class_idx,
                 std::optional<std::size_t> target_layer = {});

// Linear blue (v = 0) to red (v = 1) ramp.
std::array<std::uint8_t, 3> heat_color(double v);

// Upsamples the heatmap bilinearly to the base size and blends each pixel as
// (1 - alpha*v) * gray + alpha*v * heat_color(v).
ColorImage overlay(const Heatmap& heatmap, const PixelGrid8& base, double alpha);

// Heatmap bilinearly resampled to width x height.
PixelGrid32 upsample(const Heatmap& heatmap, int width, int height);

// round(255 * v) per cell, for PGM export.
PixelGrid8 heatmap_to_grid(const Heatmap& heatmap);

}  // namespace fracdet
