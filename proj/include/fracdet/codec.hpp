#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fracdet/image.hpp"

namespace fracdet {

using Bytes = std::vector<std::uint8_t>;

enum class ImageFormat { kPgm, kPpm, kPng, kJpeg, kUnknown };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

// Binary PNM (P5 / P6). Samples with maxval < 255 are rescaled to 8 bits.
PixelGrid8 decode_pgm(std::span<const std::uint8_t> bytes);
ColorImage decode_ppm(std::span<const std::uint8_t> bytes);
Bytes encode_pgm(const PixelGrid8& img);
Bytes encode_ppm(const ColorImage& img);

Bytes encode_png(const PixelGrid8& img);
Bytes encode_png(const ColorImage& img);

// Any supported container (PGM, PPM, PNG, JPEG) decoded to RGB.
ColorImage decode_image(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

ColorImage read_image(const std::filesystem::path& path);
// Container chosen from the extension: .pgm, .ppm or .png.
void write_image(const std::filesystem::path& path, const PixelGrid8& img);
void write_image(const std::filesystem::path& path, const ColorImage& img);

}  // namespace fracdet
