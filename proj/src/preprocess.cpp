#include "fracdet/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>

#include "fracdet/error.hpp"

namespace fracdet {

namespace {

using Mapping = std::array<std::uint8_t, 256>;

std::vector<int> partition(int size, int parts) {
  std::vector<int> bounds(parts + 1);
  for (int i = 0; i <= parts; ++i) bounds[i] = static_cast<int>(static_cast<long long>(i) * size / parts);
  return bounds;
}

Mapping tile_mapping(const PixelGrid8& img, int x0, int x1, int y0, int y1, double clip_factor) {
  std::array<long long, 256> hist{};
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) ++hist[img.at(x, y)];
  }
  const long long n = static_cast<long long>(x1 - x0) * (y1 - y0);
  if (std::isfinite(clip_factor)) {
    const long long limit = std::max<long long>(1, static_cast<long long>(std::floor(clip_factor * n / 256.0)));
    long long excess = 0;
    for (auto& h : hist) {
      if (h > limit) {
        excess += h - limit;
        h = limit;
      }
    }
    const long long share = excess / 256;
    const long long remainder = excess % 256;
    for (int b = 0; b < 256; ++b) hist[b] += share + (b < remainder ? 1 : 0);
  }
  Mapping map{};
  long long cdf = 0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[v];
    map[v] = to_u8(255.0 * static_cast<double>(cdf) / static_cast<double>(n));
  }
  return map;
}

struct Blend {
  int lo;
  int hi;
  double w;  // weight of hi
};

// Interpolation coordinates between tile centers along one axis.
std::vector<Blend> center_blend(int size, const std::vector<int>& bounds) {
  const int tiles = static_cast<int>(bounds.size()) - 1;
  std::vector<double> centers(tiles);
  for (int i = 0; i < tiles; ++i) centers[i] = (bounds[i] + bounds[i + 1] - 1) / 2.0;
  std::vector<Blend> out(size);
  for (int p = 0; p < size; ++p) {
    if (p <= centers.front()) {
      out[p] = {0, 0, 0.0};
    } else if (p >= centers.back()) {
      out[p] = {tiles - 1, tiles - 1, 0.0};
    } else {
      int i = 0;
      while (!(centers[i] <= p && p < centers[i + 1])) ++i;
      out[p] = {i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i])};
    }
  }
  return out;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

PixelGrid8 clahe(const PixelGrid8& img, const ClaheConfig& cfg) {
  if (cfg.tile_rows < 1 || cfg.tile_cols < 1) throw_invalid("CLAHE tile grid must be at least 1x1");
  if (!(cfg.clip_factor > 0.0)) throw_invalid("CLAHE clip factor must be positive");
  if (img.width < cfg.tile_cols || img.height < cfg.tile_rows) {
    throw_invalid("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                  " is smaller than the CLAHE tile grid");
  }
  const auto rows = partition(img.height, cfg.tile_rows);
  const auto cols = partition(img.width, cfg.tile_cols);
  std::vector<Mapping> maps(static_cast<std::size_t>(cfg.tile_rows) * cfg.tile_cols);
  for (int r = 0; r < cfg.tile_rows; ++r) {
    for (int c = 0; c < cfg.tile_cols; ++c) {
      maps[r * cfg.tile_cols + c] = tile_mapping(img, cols[c], cols[c + 1], rows[r], rows[r + 1], cfg.clip_factor);
    }
  }
  const auto by = center_blend(img.height, rows);
  const auto bx = center_blend(img.width, cols);
  PixelGrid8 out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    const Blend& vy = by[y];
    for (int x = 0; x < img.width; ++x) {
      const Blend& vx = bx[x];
      const std::uint8_t v = img.at(x, y);
      const double m00 = maps[vy.lo * cfg.tile_cols + vx.lo][v];
      const double m01 = maps[vy.lo * cfg.tile_cols + vx.hi][v];
      const double m10 = maps[vy.hi * cfg.tile_cols + vx.lo][v];
      const double m11 = maps[vy.hi * cfg.tile_cols + vx.hi][v];
      const double top = m00 * (1.0 - vx.w) + m01 * vx.w;
      const double bottom = m10 * (1.0 - vx.w) + m11 * vx.w;
      out.at(x, y) = to_u8(top * (1.0 - vy.w) + bottom * vy.w);
    }
  }
  return out;
}

OtsuResult otsu_threshold(const PixelGrid8& img) {
  std::array<long long, 256> hist{};
  for (auto v : img.values) ++hist[v];
  const long long total = static_cast<long long>(img.values.size());
  if (std::count_if(hist.begin(), hist.end(), [](long long h) { return h > 0; }) < 2) {
    throw Error(ErrorCode::kDegenerateHistogram, "degenerate-histogram: image has a single intensity level");
  }
  long long sum_all = 0;
  for (int v = 0; v < 256; ++v) sum_all += v * hist[v];

  // w0*w1*(mu0-mu1)^2 = (N*S0 - n0*S)^2 / (N^2 * n0 * n1). The numerator's
  // inner difference is an exact integer, so identical partitions always
  // produce bit-identical scores.
  OtsuResult best{0, -1.0};
  long long n0 = 0;
  long long s0 = 0;
  const double n2 = static_cast<double>(total) * static_cast<double>(total);
  for (int t = 0; t <= 254; ++t) {
    n0 += hist[t];
    s0 += t * hist[t];
    const long long n1 = total - n0;
    double score = 0.0;
    if (n0 > 0 && n1 > 0) {
      const double diff = static_cast<double>(total * s0 - n0 * sum_all);
      score = diff * diff / (n2 * static_cast<double>(n0) * static_cast<double>(n1));
    }
    if (score > best.between_class_variance) best = {t, score};
  }
  return best;
}

PixelGrid8 binarize(const PixelGrid8& img, int threshold) {
  if (threshold < 0 || threshold > 255) throw_invalid("threshold must lie in [0, 255]");
  PixelGrid8 out(img.width, img.height);
  for (std::size_t i = 0; i < img.values.size(); ++i) out.values[i] = img.values[i] > threshold ? 255 : 0;
  return out;
}

PixelGrid32 gaussian_blur5(const PixelGrid8& img, double sigma) {
  if (!(sigma > 0.0)) throw_invalid("gaussian sigma must be positive");
  std::array<double, 5> k{};
  double ksum = 0.0;
  for (int d = -2; d <= 2; ++d) {
    k[d + 2] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    ksum += k[d + 2];
  }
  for (auto& v : k) v /= ksum;
  const int w = img.width;
  const int h = img.height;
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d) acc += k[d + 2] * img.at(reflect101(x + d, w), y);
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  PixelGrid32 out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d) acc += k[d + 2] * tmp[static_cast<std::size_t>(reflect101(y + d, h)) * w + x];
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

GradientField sobel_gradients(const PixelGrid32& img) {
  const int w = img.width;
  const int h = img.height;
  GradientField g;
  g.width = w;
  g.height = h;
  g.magnitude.assign(static_cast<std::size_t>(w) * h, 0.0f);
  g.direction.assign(static_cast<std::size_t>(w) * h, 0);
  auto px = [&](int x, int y) { return static_cast<double>(img.at(reflect101(x, w), reflect101(y, h))); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g.magnitude[i] = static_cast<float>(std::sqrt(gx * gx + gy * gy));
      double deg = std::atan2(gy, gx) * 180.0 / M_PI;
      if (deg < 0.0) deg += 180.0;
      std::uint8_t dir = 0;
      if (deg >= 22.5 && deg < 67.5) {
        dir = 1;
      } else if (deg >= 67.5 && deg < 112.5) {
        dir = 2;
      } else if (deg >= 112.5 && deg < 157.5) {
        dir = 3;
      }
      g.direction[i] = dir;
    }
  }
  return g;
}

PixelGrid8 canny(const PixelGrid8& img, const CannyConfig& cfg) {
  if (img.width < 5 || img.height < 5) throw_invalid("canny needs an image of at least 5x5");
  if (!(cfg.low_frac > 0.0 && cfg.low_frac < cfg.high_frac && cfg.high_frac <= 1.0)) {
    throw_invalid("canny thresholds must satisfy 0 < low < high <= 1");
  }
  const GradientField g = sobel_gradients(gaussian_blur5(img, cfg.gaussian_sigma));
  const int w = g.width;
  const int h = g.height;
  const float max_mag = *std::max_element(g.magnitude.begin(), g.magnitude.end());
  PixelGrid8 out(w, h);
  if (!(max_mag > 0.0f)) return out;

  // Offsets of the "ahead" neighbor per quantized direction.
  static constexpr int kDx[4] = {1, 1, 0, -1};
  static constexpr int kDy[4] = {0, 1, 1, 1};
  const float high = static_cast<float>(cfg.high_frac * max_mag);
  const float low = static_cast<float>(cfg.low_frac * max_mag);

  // 0 = suppressed, 1 = weak, 2 = strong
  std::vector<std::uint8_t> cls(static_cast<std::size_t>(w) * h, 0);
  std::deque<std::pair<int, int>> frontier;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float m = g.magnitude[i];
      if (m <= 0.0f || m < low) continue;
      const int d = g.direction[i];
      const float behind = g.magnitude[static_cast<std::size_t>(y - kDy[d]) * w + (x - kDx[d])];
      const float ahead = g.magnitude[static_cast<std::size_t>(y + kDy[d]) * w + (x + kDx[d])];
      if (!(m > behind && m >= ahead)) continue;
      if (m >= high) {
        cls[i] = 2;
        frontier.emplace_back(x, y);
      } else {
        cls[i] = 1;
      }
    }
  }
  while (!frontier.empty()) {
    const auto [x, y] = frontier.front();
    frontier.pop_front();
    out.at(x, y) = 255;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t j = static_cast<std::size_t>(y + dy) * w + (x + dx);
        if (cls[j] == 1) {
          cls[j] = 2;
          frontier.emplace_back(x + dx, y + dy);
        }
      }
    }
  }
  return out;
}

PipelineOutput run_pipeline(const ColorImage& img, const PipelineConfig& cfg) {
  PipelineOutput out;
  const PixelGrid8 gray = to_grayscale(img);
  out.enhanced = clahe(gray, cfg.clahe);
  out.resized = resize_bilinear(gray, cfg.target_width, cfg.target_height);
  out.model_input = replicate_channels(normalize(resize_bilinear(out.enhanced, cfg.target_width, cfg.target_height)));
  try {
    const OtsuResult otsu = otsu_threshold(out.enhanced);
    out.otsu_threshold = otsu.threshold;
    out.mask = binarize(out.enhanced, otsu.threshold);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDegenerateHistogram) throw;
    out.degenerate_histogram = true;
    out.mask = PixelGrid8(out.enhanced.width, out.enhanced.height, 0);
  }
  out.edges = canny(out.enhanced, cfg.canny);
  return out;
}

Tensor model_input(const ColorImage& img, const PipelineConfig& cfg) {
  const PixelGrid8 enhanced = clahe(to_grayscale(img), cfg.clahe);
  return replicate_channels(normalize(resize_bilinear(enhanced, cfg.target_width, cfg.target_height)));
}

PixelGrid8 triptych(const PipelineOutput& out) {
  const std::array<PixelGrid8, 3> panels{out.enhanced, out.mask, out.edges};
  return hconcat(panels);
}

}  // namespace fracdet
