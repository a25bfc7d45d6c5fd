#include "fracdet/layers.hpp"

#include <algorithm>
#include <cmath>

#include "fracdet/error.hpp"

namespace fracdet::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw_invalid(what);
}

void require_rank3(const Tensor& x, const char* who) {
  require(x.rank() == 3, std::string(who) + ": expected (C,H,W) input, got " + shape_string(x.shape()));
}

// out[x] += w0*in[x-1] + w1*in[x] + w2*in[x+1] with zero padding.
inline void conv_row(float* out, const float* in, std::size_t width, float w0, float w1, float w2) {
  if (width == 1) {
    out[0] += w1 * in[0];
    return;
  }
  out[0] += w1 * in[0] + w2 * in[1];
  for (std::size_t x = 1; x + 1 < width; ++x) out[x] += w0 * in[x - 1] + w1 * in[x] + w2 * in[x + 1];
  out[width - 1] += w0 * in[width - 2] + w1 * in[width - 1];
}

}  // namespace

Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank3(x, "conv3x3");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  require(w.rank() == 4 && w.dim(1) == cin && w.dim(2) == 3 && w.dim(3) == 3,
          "conv3x3: weight shape " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()));
  const std::size_t cout = w.dim(0);
  require(b.rank() == 1 && b.dim(0) == cout, "conv3x3: bias shape " + shape_string(b.shape()));

  Tensor y({cout, h, wd});
  const std::size_t plane = h * wd;
  for (std::size_t o = 0; o < cout; ++o) {
    float* out = y.data() + o * plane;
    std::fill(out, out + plane, b[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const float* in = x.data() + c * plane;
      const float* k = w.data() + (o * cin + c) * 9;
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (int ky = 0; ky < 3; ++ky) {
          const long sy = static_cast<long>(yy) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          conv_row(out + yy * wd, in + sy * wd, wd, k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
        }
      }
    }
  }
  return y;
}

Tensor conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                        bool need_dx) {
  require_rank3(x, "conv3x3_backward");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0);
  require(dy.shape() == Shape{cout, h, wd}, "conv3x3_backward: gradient shape " + shape_string(dy.shape()));
  require(dw.shape() == w.shape() && db.shape() == Shape{cout}, "conv3x3_backward: accumulator shape mismatch");
  const std::size_t plane = h * wd;

  for (std::size_t o = 0; o < cout; ++o) {
    const float* g = dy.data() + o * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += g[i];
    db[o] += static_cast<float>(s);
  }

  // Weight gradient: per-tap row accumulators keep the inner loop vectorizable.
  std::vector<float> acc(9 * wd);
  for (std::size_t o = 0; o < cout; ++o) {
    const float* g = dy.data() + o * plane;
    for (std::size_t c = 0; c < cin; ++c) {
      const float* in = x.data() + c * plane;
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (std::size_t yy = 0; yy < h; ++yy) {
        const float* grow = g + yy * wd;
        for (int ky = 0; ky < 3; ++ky) {
          const long sy = static_cast<long>(yy) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const float* irow = in + sy * wd;
          float* a0 = acc.data() + (ky * 3 + 0) * wd;
          float* a1 = acc.data() + (ky * 3 + 1) * wd;
          float* a2 = acc.data() + (ky * 3 + 2) * wd;
          for (std::size_t xx = 1; xx < wd; ++xx) a0[xx] += grow[xx] * irow[xx - 1];
          for (std::size_t xx = 0; xx < wd; ++xx) a1[xx] += grow[xx] * irow[xx];
          for (std::size_t xx = 0; xx + 1 < wd; ++xx) a2[xx] += grow[xx] * irow[xx + 1];
        }
      }
      float* k = dw.data() + (o * cin + c) * 9;
      for (std::size_t t = 0; t < 9; ++t) {
        const float* a = acc.data() + t * wd;
        float s = 0.0f;
        for (std::size_t xx = 0; xx < wd; ++xx) s += a[xx];
        k[t] += s;
      }
    }
  }

  if (!need_dx) return {};
  Tensor dx(x.shape());
  for (std::size_t c = 0; c < cin; ++c) {
    float* out = dx.data() + c * plane;
    for (std::size_t o = 0; o < cout; ++o) {
      const float* g = dy.data() + o * plane;
      const float* k = w.data() + (o * cin + c) * 9;
      // dx[y+ky-1][x+kx-1] += k[ky][kx] * g[y][x], i.e. a correlation with the
      // kernel flipped in both axes.
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (int ky = 0; ky < 3; ++ky) {
          const long sy = static_cast<long>(yy) - ky + 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          conv_row(out + yy * wd, g + sy * wd, wd, k[ky * 3 + 2], k[ky * 3 + 1], k[ky * 3]);
        }
      }
    }
  }
  return dx;
}

Tensor maxpool2x2_forward(const Tensor& x) {
  require_rank3(x, "maxpool2x2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(h >= 2 && w >= 2, "maxpool2x2: input " + shape_string(x.shape()) + " smaller than the window");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const float a = x.at(ch, 2 * i, 2 * j), b = x.at(ch, 2 * i, 2 * j + 1);
        const float cc = x.at(ch, 2 * i + 1, 2 * j), d = x.at(ch, 2 * i + 1, 2 * j + 1);
        y.at(ch, i, j) = std::max(std::max(a, b), std::max(cc, d));
      }
    }
  }
  return y;
}

Tensor maxpool2x2_backward(const Tensor& x, const Tensor& dy) {
  require_rank3(x, "maxpool2x2_backward");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  require(dy.shape() == Shape{c, oh, ow}, "maxpool2x2_backward: gradient shape " + shape_string(dy.shape()));
  Tensor dx(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t by = 2 * i, bx = 2 * j;
        float best = x.at(ch, by, bx);
        for (std::size_t k = 1; k < 4; ++k) {
          const std::size_t yy = 2 * i + k / 2, xx = 2 * j + k % 2;
          if (x.at(ch, yy, xx) > best) {
            best = x.at(ch, yy, xx);
            by = yy;
            bx = xx;
          }
        }
        dx.at(ch, by, bx) += dy.at(ch, i, j);
      }
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require(x.shape() == dy.shape(), "relu_backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.rank() == 2 && w.dim(1) == x.size(),
          "dense: weight shape " + shape_string(w.shape()) + " incompatible with " + std::to_string(x.size()) + " inputs");
  const std::size_t out = w.dim(0), in = w.dim(1);
  require(b.rank() == 1 && b.dim(0) == out, "dense: bias shape " + shape_string(b.shape()));
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    const float* row = w.data() + o * in;
    float s = 0.0f;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
    y[o] = s + b[o];
  }
  return y;
}

Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  require(dy.size() == out && x.size() == in, "dense_backward: shape mismatch");
  require(dw.shape() == w.shape() && db.shape() == Shape{out}, "dense_backward: accumulator shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t o = 0; o < out; ++o) {
    const float g = dy[o];
    db[o] += g;
    if (g == 0.0f) continue;
    const float* row = w.data() + o * in;
    float* drow = dw.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      drow[i] += g * x[i];
      dx[i] += g * row[i];
    }
  }
  return dx;
}

Tensor global_avg_pool_forward(const Tensor& x) {
  require_rank3(x, "global_avg_pool");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor y({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
    y[ch] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy) {
  require(x_shape.size() == 3 && dy.size() == x_shape[0], "global_avg_pool_backward: shape mismatch");
  const std::size_t plane = x_shape[1] * x_shape[2];
  Tensor dx(x_shape);
  for (std::size_t ch = 0; ch < x_shape[0]; ++ch) {
    const float g = dy[ch] / static_cast<float>(plane);
    std::fill(dx.data() + ch * plane, dx.data() + (ch + 1) * plane, g);
  }
  return dx;
}

Tensor softmax(const Tensor& logits) {
  require(logits.size() >= 1, "softmax: empty logits");
  const float m = *std::max_element(logits.values().begin(), logits.values().end());
  std::vector<double> e(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - m);
    s += e[i];
  }
  Tensor p({logits.size()});
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = static_cast<float>(e[i] / s);
  return p;
}

SoftmaxCE softmax_ce_forward(const Tensor& logits, std::size_t label) {
  require(label < logits.size(), "softmax_ce: label " + std::to_string(label) + " out of range for " +
                                     std::to_string(logits.size()) + " classes");
  const double m = *std::max_element(logits.values().begin(), logits.values().end());
  double s = 0.0;
  for (float l : logits.values()) s += std::exp(static_cast<double>(l) - m);
  SoftmaxCE out;
  out.probabilities = softmax(logits);
  out.loss = m + std::log(s) - static_cast<double>(logits[label]);
  return out;
}

Tensor softmax_ce_backward(const Tensor& probabilities, std::size_t label) {
  require(label < probabilities.size(), "softmax_ce_backward: label out of range");
  Tensor g = probabilities;
  g[label] -= 1.0f;
  return g;
}

Adam::Adam(AdamConfig cfg, std::span<const Tensor> params) : cfg_(cfg) {
  if (!(cfg.learning_rate > 0.0f)) throw_invalid("adam: learning rate must be positive");
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "adam: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].shape() == m_[k].shape() && grads[k].shape() == m_[k].shape(),
            "adam: shape mismatch for parameter " + std::to_string(k));
  }
  ++t_;
  const double c1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  const float b1 = cfg_.beta1, b2 = cfg_.beta2;
  for (std::size_t k = 0; k < params.size(); ++k) {
    float* p = params[k].data();
    const float* g = grads[k].data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= static_cast<float>(cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
    }
  }
}

double finite_difference_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic, const GradCheckOptions& opts) {
  require(analytic.shape() == x.shape(), "finite_difference_check: gradient shape mismatch");
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (opts.skip && opts.skip(x, i)) continue;
    const float orig = probe[i];
    probe[i] = orig + opts.epsilon;
    const double up = f(probe);
    probe[i] = orig - opts.epsilon;
    const double down = f(probe);
    probe[i] = orig;
    // The probe step actually taken in float arithmetic.
    const double step = static_cast<double>(orig + opts.epsilon) - static_cast<double>(orig - opts.epsilon);
    const double numeric = (up - down) / step;
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.denominator_floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace fracdet::nn
