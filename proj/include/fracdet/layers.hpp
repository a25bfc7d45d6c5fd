#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fracdet/tensor.hpp"

// Forward and backward kernels for the sequential CNN. Backward functions
// return the input gradient and *accumulate* parameter gradients into the
// caller's buffers, so a batch can be summed without extra copies.
namespace fracdet::nn {

// 3x3, stride 1, zero "same" padding. x: (C, H, W), w: (O, C, 3, 3), b: (O).
Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                        bool need_dx = true);

// 2x2, stride 2. Odd trailing rows/columns are dropped.
Tensor maxpool2x2_forward(const Tensor& x);
// Routes each window's gradient to its maximum; ties go to the first element
// in row-major order.
Tensor maxpool2x2_backward(const Tensor& x, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// y = W x + b. x: (N) (any shape with N values), w: (O, N), b: (O).
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db);

// (C, H, W) -> (C)
Tensor global_avg_pool_forward(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy);

Tensor softmax(const Tensor& logits);

struct SoftmaxCE {
  Tensor probabilities;
  double loss = 0.0;
};

// Sparse categorical cross-entropy on raw logits.
SoftmaxCE softmax_ce_forward(const Tensor& logits, std::size_t label);
// d loss / d logits = probabilities - one_hot(label)
Tensor softmax_ce_backward(const Tensor& probabilities, std::size_t label);

struct AdamConfig {
  float learning_rate = 0.0005f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

class Adam {
 public:
  Adam(AdamConfig cfg, std::span<const Tensor> params);

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|,
// floor), where numeric is the central difference (f(x+e) - f(x-e)) / 2e.
// The floor sits above the float32 roundoff of the difference quotient.
// Coordinates for which `skip` returns true are left out.
struct GradCheckOptions {
  float epsilon = 1e-3f;
  double denominator_floor = 0.1;
  std::function<bool(const Tensor& x, std::size_t index)> skip;
};

double finite_difference_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic, const GradCheckOptions& opts = {});

}  // namespace fracdet::nn
