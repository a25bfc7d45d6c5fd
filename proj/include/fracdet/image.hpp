#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fracdet/tensor.hpp"

namespace fracdet {

// Interleaved 8-bit RGB raster, row-major.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // width * height * 3

  ColorImage() = default;
  ColorImage(int w, int h);

  std::uint8_t* pixel(int x, int y) { return &values[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &values[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  bool operator==(const ColorImage&) const = default;
};

// 8-bit grayscale raster, row-major.
struct PixelGrid8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  PixelGrid8() = default;
  PixelGrid8(int w, int h, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool operator==(const PixelGrid8&) const = default;
};

// Float grayscale raster; values lie in [0, 1] after normalize().
struct PixelGrid32 {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  PixelGrid32() = default;
  PixelGrid32(int w, int h, float fill = 0.0f);

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Round half away from zero and clamp into [0, 255].
std::uint8_t to_u8(double v);

// BT.601 luma.
PixelGrid8 to_grayscale(const ColorImage& img);
ColorImage gray_to_color(const PixelGrid8& img);

// Half-pixel-center bilinear resampling with edge clamping.
PixelGrid8 resize_bilinear(const PixelGrid8& img, int out_w, int out_h);
PixelGrid32 resize_bilinear(const PixelGrid32& img, int out_w, int out_h);

PixelGrid32 normalize(const PixelGrid8& img);
PixelGrid8 quantize(const PixelGrid32& img);

// (3, H, W) tensor with the plane copied into every channel.
Tensor replicate_channels(const PixelGrid32& img);
// (3, H, W) tensor from an RGB image, each channel scaled by 1/255.
Tensor color_to_tensor(const ColorImage& img);

// Horizontal concatenation of equally tall grids.
PixelGrid8 hconcat(std::span<const PixelGrid8> panels);

}  // namespace fracdet
