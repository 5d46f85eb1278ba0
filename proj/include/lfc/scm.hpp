#pragma once

// Asymmetric strip convolution (ASC) layers and the strip convolution module.
//
//   asc(x) = C0(C1(x) + C2(x) + C3(x)) + x
//            C1: s^2 x 1, C2: 1 x s^2, C3: s x s, C0: 1x1, all same-padded
//   scm(x) = GDN(asc2(GELU(asc1(r(x))))) + r(x)
//
// r is the block's resampling step: a 3x3 stride-2 conv (down2), a 4x4
// stride-2 transposed conv (up2), a 1x1 projection when only the channel
// count changes, or the identity.

#include <string>

#include "lfc/layers.hpp"

namespace lfc {

enum class Resample { none, down2, up2 };

struct ScmConfig {
  int in_channels = 1;
  int out_channels = 1;
  Resample resample = Resample::none;
  int side = 3;          // s; the long strips have length s^2
  bool strip = true;     // false keeps only the s x s branch
  bool inverse_gdn = false;
};

class AscLayer {
 public:
  AscLayer() = default;
  AscLayer(ParameterStore& store, const std::string& name, int channels, int side, bool strip, Rng& rng);

  Var operator()(Var x) const;

 private:
  int channels_ = 0;
  bool strip_ = true;
  Conv2d vertical_;    // C1
  Conv2d horizontal_;  // C2
  Conv2d square_;      // C3
  Conv2d mix_;         // C0
};

class ScmBlock {
 public:
  ScmBlock() = default;
  ScmBlock(ParameterStore& store, const std::string& name, const ScmConfig& config, Rng& rng);

  Var operator()(Var x) const;
  Var resample(Var x) const;
  const ScmConfig& config() const { return config_; }

 private:
  ScmConfig config_;
  Conv2d down_;
  ConvTranspose2d up_;
  Conv2d project_;
  AscLayer f1_;
  AscLayer f2_;
  Gdn gdn_;
};

}  // namespace lfc
