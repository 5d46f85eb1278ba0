#pragma once

// Probability models for the latents:
//   - a per-channel factorized prior for the hyper-latent z,
//   - a conditional Gaussian for y whose (mu, sigma) come from hyper
//     features and a space-channel context (channel groups x checkerboard).

#include <string>
#include <vector>

#include "lfc/layers.hpp"
#include "lfc/range_coder.hpp"

namespace lfc {

inline constexpr double kLikelihoodBound = 1e-9;
inline constexpr double kSigmaBound = 0.04;

// Sum of -log2 p over all entries; NumericError when any p <= 0.
Var estimate_bits(Var likelihoods);

// sigma = kSigmaBound + softplus(raw)
Var scale_from_raw(Var raw);

// ---------------------------------------------------------------------------
// Factorized prior

class FactorizedPrior {
 public:
  FactorizedPrior() = default;
  FactorizedPrior(ParameterStore& store, const std::string& name, int channels, Rng& rng,
                  double init_scale = 10.0);

  int channels() const { return channels_; }

  // Bin probability of each entry of z (N, C, H, W) over [z - h, z + h),
  // not yet lower-bounded.
  Var likelihood(Var z, double half_width) const;

  // Cumulative logit l(x) for channel c; sigmoid(l) is the CDF.
  double logit(int c, double x) const;
  double bin_probability(int c, double x, double half_width) const;

  // Coding table over integer symbols k (values k * step) for channel c.
  FrequencyTable table(int c, double step) const;

 private:
  static constexpr int kDepth = 4;
  static constexpr int kWidths[kDepth + 1] = {1, 3, 3, 3, 1};
  int channels_ = 0;
  Tensor* matrices_[kDepth] = {};
  Tensor* biases_[kDepth] = {};
  Tensor* factors_[kDepth - 1] = {};
};

// ---------------------------------------------------------------------------
// Space-channel context

struct ContextConfig {
  int latent_channels = 64;   // M
  int hyper_channels = 64;    // channels of the hyper-synthesis features
  int groups = 4;
  bool hyper_only = false;    // disables both context paths
};

// 1 at anchor sites ((i + j) even), shape (1, 1, H, W).
Tensor anchor_mask(int H, int W);
Tensor nonanchor_mask(int H, int W);

struct GaussianParams {
  Var mu;
  Var sigma;
};

class ContextModel {
 public:
  ContextModel() = default;
  ContextModel(ParameterStore& store, const std::string& name, const ContextConfig& config, Rng& rng);

  const ContextConfig& config() const { return config_; }
  int group_channels() const { return config_.latent_channels / config_.groups; }

  // (mu, sigma) for group g. Reads only hyper, channels of y below group g,
  // and the anchor sites of group g.
  GaussianParams predict_group(Var hyper, Var y, int g) const;
  // All groups in one pass; concatenated along channels.
  GaussianParams predict(Var hyper, Var y) const;

 private:
  ContextConfig config_;
  std::vector<Conv2d> spatial_;   // 5x5 on the anchors of the own group
  std::vector<Conv2d> channel_;   // 3x3 on previously coded groups (g >= 1)
  std::vector<Conv2d> hidden_;
  std::vector<Conv2d> output_;
};

}  // namespace lfc
