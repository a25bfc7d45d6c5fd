#include "fracdet/image.hpp"

#include <algorithm>
#include <cmath>

#include "fracdet/error.hpp"

namespace fracdet {

namespace {

void check_dims(int w, int h) {
  if (w < 1 || h < 1) {
    throw_invalid("image dimensions must be positive, got " + std::to_string(w) + "x" +
                  std::to_string(h));
  }
}

struct Tap {
  int lo;
  int hi;
  double frac;
};

// Source taps for one output coordinate under the half-pixel-center mapping.
std::vector<Tap> resample_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int d = 0; d < out_size; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in_size - 1);
    taps[d] = {lo, hi, src - lo};
  }
  return taps;
}

template <typename Sample, typename Emit>
void resample(int in_w, int in_h, int out_w, int out_h, Sample sample, Emit emit) {
  const auto xs = resample_taps(in_w, out_w);
  const auto ys = resample_taps(in_h, out_h);
  for (int y = 0; y < out_h; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& tx = xs[x];
      const double top = sample(tx.lo, ty.lo) * (1.0 - tx.frac) + sample(tx.hi, ty.lo) * tx.frac;
      const double bottom = sample(tx.lo, ty.hi) * (1.0 - tx.frac) + sample(tx.hi, ty.hi) * tx.frac;
      emit(x, y, top * (1.0 - ty.frac) + bottom * ty.frac);
    }
  }
}

}  // namespace

ColorImage::ColorImage(int w, int h) : width(w), height(h) {
  check_dims(w, h);
  values.assign(static_cast<std::size_t>(w) * h * 3, 0);
}

PixelGrid8::PixelGrid8(int w, int h, std::uint8_t fill) : width(w), height(h) {
  check_dims(w, h);
  values.assign(static_cast<std::size_t>(w) * h, fill);
}

PixelGrid32::PixelGrid32(int w, int h, float fill) : width(w), height(h) {
  check_dims(w, h);
  values.assign(static_cast<std::size_t>(w) * h, fill);
}

std::uint8_t to_u8(double v) {
  // std::round rounds half away from zero.
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

PixelGrid8 to_grayscale(const ColorImage& img) {
  PixelGrid8 out(img.width, img.height);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::uint8_t* p = &img.values[i * 3];
    out.values[i] = to_u8(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
  }
  return out;
}

ColorImage gray_to_color(const PixelGrid8& img) {
  ColorImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    out.values[i * 3] = out.values[i * 3 + 1] = out.values[i * 3 + 2] = img.values[i];
  }
  return out;
}

PixelGrid8 resize_bilinear(const PixelGrid8& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw_invalid("resize target must be at least 1x1");
  PixelGrid8 out(out_w, out_h);
  resample(
      img.width, img.height, out_w, out_h, [&](int x, int y) { return double(img.at(x, y)); },
      [&](int x, int y, double v) { out.at(x, y) = to_u8(v); });
  return out;
}

PixelGrid32 resize_bilinear(const PixelGrid32& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw_invalid("resize target must be at least 1x1");
  PixelGrid32 out(out_w, out_h);
  resample(
      img.width, img.height, out_w, out_h, [&](int x, int y) { return double(img.at(x, y)); },
      [&](int x, int y, double v) { out.at(x, y) = static_cast<float>(v); });
  return out;
}

PixelGrid32 normalize(const PixelGrid8& img) {
  PixelGrid32 out(img.width, img.height);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    out.values[i] = static_cast<float>(img.values[i] / 255.0);
  }
  return out;
}

PixelGrid8 quantize(const PixelGrid32& img) {
  PixelGrid8 out(img.width, img.height);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    out.values[i] = to_u8(static_cast<double>(img.values[i]) * 255.0);
  }
  return out;
}

Tensor replicate_channels(const PixelGrid32& img) {
  const std::size_t plane = img.values.size();
  Tensor t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (std::size_t c = 0; c < 3; ++c) {
    std::copy(img.values.begin(), img.values.end(), t.data() + c * plane);
  }
  return t;
}

Tensor color_to_tensor(const ColorImage& img) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  Tensor t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      t[c * plane + i] = static_cast<float>(img.values[i * 3 + c] / 255.0);
    }
  }
  return t;
}

PixelGrid8 hconcat(std::span<const PixelGrid8> panels) {
  if (panels.empty()) throw_invalid("hconcat needs at least one panel");
  const int h = panels.front().height;
  int w = 0;
  for (const auto& p : panels) {
    if (p.height != h) throw_invalid("hconcat panels must share a height");
    w += p.width;
  }
  PixelGrid8 out(w, h);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < h; ++y) {
      std::copy_n(&p.values[static_cast<std::size_t>(y) * p.width], p.width, &out.at(x0, y));
    }
    x0 += p.width;
  }
  return out;
}

}  // namespace fracdet
