#pragma once

// Differentiable operator set for the codec networks. All tensors are
// rank-4 (N, C, H, W) unless stated otherwise. Every op records itself on
// the tape of its first input.

#include <span>
#include <vector>

#include "lfc/autograd.hpp"

namespace lfc {

enum class PadMode { zero, replicate };

// Cross-correlation geometry. Padding is given per side so even-length
// kernels can be same-padded; out = floor((in + pad_lo + pad_hi - d*(k-1) - 1)/s) + 1.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int dilation_h = 1;
  int dilation_w = 1;
  int pad_top = 0;
  int pad_bottom = 0;
  int pad_left = 0;
  int pad_right = 0;
  PadMode pad_mode = PadMode::zero;

  int out_h(int in_h) const;
  int out_w(int in_w) const;
  void validate() const;
  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }

  // Sets padding so stride-1 output extent equals input extent.
  ConvSpec& same_padding();
  ConvSpec& symmetric_padding(int ph, int pw);
};

// Transposed convolution; weight is (in_channels, out_channels, kh, kw) and
// out = (in - 1)*s + k - 2p.
struct DeconvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_h(int in_h) const { return (in_h - 1) * stride_h + kernel_h - 2 * pad_h; }
  int out_w(int in_w) const { return (in_w - 1) * stride_w + kernel_w - 2 * pad_w; }
  Shape weight_shape() const { return {in_channels, out_channels, kernel_h, kernel_w}; }
};

// `bias` may be a default-constructed Var for no bias.
Var conv2d(Var x, Var weight, Var bias, const ConvSpec& spec);
Var conv_transpose2d(Var x, Var weight, Var bias, const DeconvSpec& spec);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var square(Var a);

Var gelu(Var x);  // exact: x * Phi(x)
Var relu(Var x);
Var sigmoid(Var x);
Var softplus(Var x);

// y_c = x_c / sqrt(beta_c + sum_j gamma_cj x_j^2); inverse multiplies instead.
// beta is (C), gamma is (C, C); both are the effective (already
// non-negative) values.
Var gdn(Var x, Var beta, Var gamma, bool inverse);

Var global_avg_pool(Var x);         // -> (N, C, 1, 1)
Var scale_channels(Var x, Var s);   // s is (N, C, 1, 1)
Var concat(std::span<const Var> xs);  // along channels
Var slice_channels(Var x, int begin, int end);
Var upsample_nearest(Var x, int factor_h, int factor_w);
// x where mask != 0, +0.0 elsewhere. mask is (1, 1, H, W) or x's shape.
Var select_mask(Var x, const Tensor& mask);
Var reshape(Var x, Shape shape);

Var sum(Var x);   // -> (1)
Var mean(Var x);  // -> (1)
Var mse(Var a, Var b);

// P(y - h <= Y < y + h) for Y ~ N(mu, sigma^2), evaluated on |y - mu| for
// accuracy in the tails.
Var gaussian_likelihood(Var y, Var mu, Var sigma, double half_width);
// max(x, bound); the gradient passes where x > bound.
Var lower_bound(Var x, double bound);
// Sum of -log2(p); throws NumericError when any p <= 0.
Var neg_log2_sum(Var p);

namespace math {
double normal_cdf(double t);
double normal_pdf(double t);
double gelu(double x);
double softplus(double x);
double sigmoid(double x);
}  // namespace math

namespace testing {
// Negative control for the gradient-check suites: when set, conv2d reports a
// weight gradient scaled by 1.01.
void set_gradient_bug(bool on);
bool gradient_bug();
}  // namespace testing

}  // namespace lfc
