#include "lfc/scm.hpp"

#include "lfc/errors.hpp"

namespace lfc {

AscLayer::AscLayer(ParameterStore& store, const std::string& name, int channels, int side, bool strip,
                   Rng& rng)
    : channels_(channels), strip_(strip) {
  if (side < 1) throw ShapeError("asc: strip side must be >= 1");
  const int len = side * side;
  if (strip) {
    ConvSpec c1{.in_channels = channels, .out_channels = channels, .kernel_h = len, .kernel_w = 1};
    ConvSpec c2{.in_channels = channels, .out_channels = channels, .kernel_h = 1, .kernel_w = len};
    vertical_ = Conv2d(store, name + ".c1", c1.same_padding(), rng);
    horizontal_ = Conv2d(store, name + ".c2", c2.same_padding(), rng);
  }
  ConvSpec c3{.in_channels = channels, .out_channels = channels, .kernel_h = side, .kernel_w = side};
  square_ = Conv2d(store, name + ".c3", c3.same_padding(), rng);
  mix_ = Conv2d(store, name + ".c0", ConvSpec{.in_channels = channels, .out_channels = channels}, rng, true,
                kResidualInitGain);
}

Var AscLayer::operator()(Var x) const {
  if (x.dim(1) != channels_) throw ShapeError("asc: channel mismatch");
  Var branches = square_(x);
  if (strip_) branches = add(add(vertical_(x), horizontal_(x)), branches);
  return add(mix_(branches), x);
}

ScmBlock::ScmBlock(ParameterStore& store, const std::string& name, const ScmConfig& config, Rng& rng)
    : config_(config) {
  const int in = config.in_channels, out = config.out_channels;
  switch (config.resample) {
    case Resample::down2: {
      ConvSpec c{.in_channels = in, .out_channels = out, .kernel_h = 3, .kernel_w = 3, .stride_h = 2, .stride_w = 2};
      down_ = Conv2d(store, name + ".down", c.symmetric_padding(1, 1), rng);
      break;
    }
    case Resample::up2:
      up_ = ConvTranspose2d(store, name + ".up",
                            DeconvSpec{.in_channels = in, .out_channels = out, .kernel_h = 4, .kernel_w = 4,
                                       .stride_h = 2, .stride_w = 2, .pad_h = 1, .pad_w = 1},
                            rng);
      break;
    case Resample::none:
      if (in != out) project_ = Conv2d(store, name + ".project", ConvSpec{.in_channels = in, .out_channels = out}, rng);
      break;
  }
  f1_ = AscLayer(store, name + ".f1", out, config.side, config.strip, rng);
  f2_ = AscLayer(store, name + ".f2", out, config.side, config.strip, rng);
  gdn_ = Gdn(store, name + ".gdn", out, config.inverse_gdn);
}

Var ScmBlock::resample(Var x) const {
  if (x.value().rank() != 4 || x.dim(1) != config_.in_channels) {
    throw ShapeError("scm: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                     to_string(x.shape()));
  }
  switch (config_.resample) {
    case Resample::down2:
      if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
        throw ShapeError("scm: down2 needs even spatial extents, got " + to_string(x.shape()));
      }
      return down_(x);
    case Resample::up2: return up_(x);
    case Resample::none: return config_.in_channels == config_.out_channels ? x : project_(x);
  }
  return x;
}

Var ScmBlock::operator()(Var x) const {
  const Var r = resample(x);
  return add(gdn_(f2_(gelu(f1_(r)))), r);
}

}  // namespace lfc
