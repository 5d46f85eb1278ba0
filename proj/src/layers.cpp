#include "lfc/layers.hpp"

#include <cmath>

#include "lfc/errors.hpp"

namespace lfc {

Conv2d::Conv2d(ParameterStore& store, const std::string& name, const ConvSpec& spec, Rng& rng,
               bool with_bias, double gain)
    : spec_(spec) {
  spec_.validate();
  const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel_h * spec.kernel_w;
  weight_ = &store.create(name + ".weight", truncated_normal(spec.weight_shape(), gain / std::sqrt(fan_in), rng));
  if (with_bias) bias_ = &store.create(name + ".bias", Tensor({spec.out_channels}));
}

Var Conv2d::operator()(Var x) const {
  Tape& tape = x.tape();
  return conv2d(x, tape.parameter(*weight_), bias_ ? tape.parameter(*bias_) : Var{}, spec_);
}

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name,
                                 const DeconvSpec& spec, Rng& rng)
    : spec_(spec) {
  const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel_h * spec.kernel_w /
                        (spec.stride_h * spec.stride_w);
  weight_ = &store.create(name + ".weight", truncated_normal(spec.weight_shape(), 1.0 / std::sqrt(fan_in), rng));
  bias_ = &store.create(name + ".bias", Tensor({spec.out_channels}));
}

Var ConvTranspose2d::operator()(Var x) const {
  Tape& tape = x.tape();
  return conv_transpose2d(x, tape.parameter(*weight_), tape.parameter(*bias_), spec_);
}

Gdn::Gdn(ParameterStore& store, const std::string& name, int channels, bool inverse)
    : channels_(channels), inverse_(inverse) {
  beta_raw_ = &store.create(name + ".beta", Tensor({channels}));
  gamma_raw_ = &store.create(name + ".gamma", Tensor({channels, channels}));
  std::vector<double> gamma(static_cast<std::size_t>(channels) * channels, 0.0);
  for (int c = 0; c < channels; ++c) gamma[static_cast<std::size_t>(c) * channels + c] = 0.1;
  set_effective(std::vector<double>(channels, 1.0), gamma);
  // Off-diagonal raw values start slightly above zero so their gradient
  // (2 * raw * dL/dgamma) is not identically zero.
  for (int i = 0; i < channels; ++i)
    for (int j = 0; j < channels; ++j)
      if (i != j) (*gamma_raw_)[static_cast<std::size_t>(i) * channels + j] = 1e-3;
}

void Gdn::set_effective(const std::vector<double>& beta, const std::vector<double>& gamma) {
  if (beta.size() != static_cast<std::size_t>(channels_) ||
      gamma.size() != static_cast<std::size_t>(channels_) * channels_) {
    throw ShapeError("gdn: parameter extent mismatch");
  }
  for (int c = 0; c < channels_; ++c) {
    if (!std::isfinite(beta[c])) throw ParameterError("gdn: non-finite beta");
    (*beta_raw_)[c] = std::sqrt(std::max(beta[c] - kGdnBetaMin, 0.0));
  }
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    if (!std::isfinite(gamma[i]) || gamma[i] < 0) throw ParameterError("gdn: gamma must be finite and >= 0");
    (*gamma_raw_)[i] = std::sqrt(gamma[i]);
  }
}

Var Gdn::operator()(Var x) const {
  Tape& tape = x.tape();
  const Var beta = add_scalar(square(tape.parameter(*beta_raw_)), kGdnBetaMin);
  const Var gamma = square(tape.parameter(*gamma_raw_));
  return gdn(x, beta, gamma, inverse_);
}

ChannelAttention::ChannelAttention(ParameterStore& store, const std::string& name, int channels,
                                   Rng& rng, int reduction)
    : channels_(channels) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ShapeError("channel attention: reduction " + std::to_string(reduction) +
                     " does not divide " + std::to_string(channels) + " channels");
  }
  squeeze_ = Conv2d(store, name + ".squeeze", ConvSpec{.in_channels = channels, .out_channels = channels / reduction}, rng);
  excite_ = Conv2d(store, name + ".excite", ConvSpec{.in_channels = channels / reduction, .out_channels = channels}, rng);
}

Var ChannelAttention::weights(Var x) const {
  if (x.dim(1) != channels_) throw ShapeError("channel attention: channel mismatch");
  return sigmoid(excite_(relu(squeeze_(global_avg_pool(x)))));
}

Var ChannelAttention::operator()(Var x) const { return scale_channels(x, weights(x)); }

ResBlock::ResBlock(ParameterStore& store, const std::string& name, int channels, Rng& rng) {
  const int mid = std::max(1, channels / 2);
  reduce_ = Conv2d(store, name + ".reduce", ConvSpec{.in_channels = channels, .out_channels = mid}, rng);
  ConvSpec c3{.in_channels = mid, .out_channels = mid, .kernel_h = 3, .kernel_w = 3};
  conv_ = Conv2d(store, name + ".conv", c3.same_padding(), rng);
  expand_ = Conv2d(store, name + ".expand", ConvSpec{.in_channels = mid, .out_channels = channels}, rng, true,
                   kResidualInitGain);
}

Var ResBlock::operator()(Var x) const { return add(expand_(gelu(conv_(gelu(reduce_(x))))), x); }

}  // namespace lfc
