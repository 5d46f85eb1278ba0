#pragma once

// Parameterized building blocks. Each layer registers its tensors in a
// ParameterStore at construction and binds them onto the input's tape on
// every call.

#include <string>

#include "lfc/ops.hpp"
#include "lfc/parameters.hpp"

namespace lfc {

// Init gain of the last conv on residual branches, so blocks start near identity.
inline constexpr double kResidualInitGain = 0.1;

class Conv2d {
 public:
  Conv2d() = default;
  // Weights ~ truncated normal with std gain / sqrt(fan_in), zero bias.
  Conv2d(ParameterStore& store, const std::string& name, const ConvSpec& spec, Rng& rng,
         bool with_bias = true, double gain = 1.0);

  Var operator()(Var x) const;
  const ConvSpec& spec() const { return spec_; }
  Tensor& weight() { return *weight_; }
  Tensor* bias() { return bias_; }

 private:
  ConvSpec spec_{};
  Tensor* weight_ = nullptr;
  Tensor* bias_ = nullptr;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore& store, const std::string& name, const DeconvSpec& spec, Rng& rng);

  Var operator()(Var x) const;
  const DeconvSpec& spec() const { return spec_; }

 private:
  DeconvSpec spec_{};
  Tensor* weight_ = nullptr;
  Tensor* bias_ = nullptr;
};

// Effective parameters are beta = beta_raw^2 + kGdnBetaMin and
// gamma = gamma_raw^2, so beta >= 1e-6 and gamma >= 0 hold without projection.
inline constexpr double kGdnBetaMin = 1e-6;

class Gdn {
 public:
  Gdn() = default;
  Gdn(ParameterStore& store, const std::string& name, int channels, bool inverse);

  Var operator()(Var x) const;
  bool inverse() const { return inverse_; }
  // Writes effective values (beta, gamma) into the raw parameters.
  void set_effective(const std::vector<double>& beta, const std::vector<double>& gamma);

 private:
  int channels_ = 0;
  bool inverse_ = false;
  Tensor* beta_raw_ = nullptr;
  Tensor* gamma_raw_ = nullptr;
};

// Squeeze-excitation: s = sigmoid(W2 relu(W1 avg(x) + b1) + b2), y = x * s.
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(ParameterStore& store, const std::string& name, int channels, Rng& rng,
                   int reduction = 4);

  Var operator()(Var x) const;
  Var weights(Var x) const;  // the per-channel factors s, (N, C, 1, 1)

 private:
  int channels_ = 0;
  Conv2d squeeze_;
  Conv2d excite_;
};

// Bottleneck residual block: 1x1 (C -> C/2), 3x3, 1x1 (C/2 -> C), GELU between.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParameterStore& store, const std::string& name, int channels, Rng& rng);

  Var operator()(Var x) const;

 private:
  Conv2d reduce_;
  Conv2d conv_;
  Conv2d expand_;
};

}  // namespace lfc
