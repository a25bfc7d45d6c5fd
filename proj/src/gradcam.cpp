#include "fracdet/gradcam.hpp"

#include <algorithm>

#include "fracdet/error.hpp"

namespace fracdet {

std::pair<int, int> Heatmap::argmax() const {
  const auto it = std::max_element(values.begin(), values.end());
  const auto idx = static_cast<int>(it - values.begin());
  return {idx % width, idx / width};
}

bool Heatmap::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f; });
}

Heatmap grad_cam_from(const Tensor& activation, const Tensor& gradient) {
  if (activation.rank() != 3 || activation.shape() != gradient.shape()) {
    throw_invalid("grad-cam needs matching (C,H,W) activation and gradient, got " + shape_string(activation.shape()) +
                  " and " + shape_string(gradient.shape()));
  }
  const std::size_t k = activation.dim(0), h = activation.dim(1), w = activation.dim(2);
  const std::size_t plane = h * w;
  std::vector<double> alpha(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += gradient[c * plane + i];
    alpha[c] = s / static_cast<double>(plane);
  }
  std::vector<double> cam(plane, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (alpha[c] == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) cam[i] += alpha[c] * activation[c * plane + i];
  }
  double peak = 0.0;
  for (auto& v : cam) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  Heatmap out;
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.values.assign(plane, 0.0f);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < plane; ++i) out.values[i] = static_cast<float>(cam[i] / peak);
  }
  return out;
}

Heatmap grad_cam(const Model& model, const Tensor& input, std::size_t class_idx, std::optional<std::size_t> target_layer) {
  const std::size_t layer = target_layer ? *target_layer : last_conv_layer(model.spec());
  const ClassScoreGradient g = class_score_gradient(model, input, class_idx, layer);
  Heatmap h = grad_cam_from(g.activation, g.gradient);
  h.target_layer = layer;
  h.class_idx = class_idx;
  return h;
}

std::array<std::uint8_t, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {to_u8(255.0 * v), 0, to_u8(255.0 * (1.0 - v))};
}

PixelGrid32 upsample(const Heatmap& heatmap, int width, int height) {
  PixelGrid32 grid(heatmap.width, heatmap.height);
  grid.values = heatmap.values;
  return resize_bilinear(grid, width, height);
}

ColorImage overlay(const Heatmap& heatmap, const PixelGrid8& base, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw_invalid("overlay alpha must lie in [0, 1]");
  const PixelGrid32 up = upsample(heatmap, base.width, base.height);
  ColorImage out(base.width, base.height);
  for (std::size_t i = 0; i < base.values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(up.values[i]), 0.0, 1.0);
    const double a = alpha * v;
    const auto color = heat_color(v);
    for (int c = 0; c < 3; ++c) {
      out.values[i * 3 + c] = to_u8((1.0 - a) * base.values[i] + a * color[c]);
    }
  }
  return out;
}

PixelGrid8 heatmap_to_grid(const Heatmap& heatmap) {
  PixelGrid8 out(heatmap.width, heatmap.height);
  for (std::size_t i = 0; i < heatmap.values.size(); ++i) out.values[i] = to_u8(255.0 * heatmap.values[i]);
  return out;
}

}  // namespace fracdet
