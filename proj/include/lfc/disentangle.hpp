#pragma once

// Subspace feature extractors over a MacPI tensor and the feature
// disentangling module (FDM) that fuses them.
//
// Geometry on an (A*H) x (A*W) MacPI, pixel(h*A+u, w*A+v) = L(u,v,h,w):
//
//   SFE     3x3, dilation A, same padding           -> AH x AW   (h, w)
//   AFE     AxA, stride A                           -> H x W     (u, v)
//   EFE-A   1xA^2, stride (1, A), pad A(A-1)/2      -> AH x W    (v, w)
//   EFE-B   A^2x1, stride (A, 1), pad A(A-1)/2      -> H x AW    (u, h)
//   UW-EFE  1xA stride (1, A), then Ax1 same        -> AH x W    (u, w)
//   VH-EFE  Ax1 stride (A, 1), then 1xA same        -> H x AW    (v, h)

#include <array>
#include <string>
#include <vector>

#include "lfc/layers.hpp"

namespace lfc {

enum class ExtractorKind { SFE, AFE, EFE_A, EFE_B, UW_EFE, VH_EFE };

inline constexpr std::array<ExtractorKind, 6> kAllExtractors = {
    ExtractorKind::SFE,   ExtractorKind::AFE,    ExtractorKind::EFE_A,
    ExtractorKind::EFE_B, ExtractorKind::UW_EFE, ExtractorKind::VH_EFE};

const char* extractor_name(ExtractorKind kind);

struct ExtractorSpec {
  ExtractorKind kind = ExtractorKind::SFE;
  int A = 2;
  int in_channels = 1;
  int out_channels = 8;
};

// Conv geometry of layer `layer` (0 or 1). Only UW-EFE and VH-EFE have a
// second layer.
int extractor_layers(ExtractorKind kind);
ConvSpec extractor_conv(const ExtractorSpec& spec, int layer);
// Output extent (rows, cols) for a MacPI of extent rows x cols.
std::pair<int, int> extractor_extent(const ExtractorSpec& spec, int rows, int cols);
// Nearest-replication factors (fh, fw) that bring the output back to the
// MacPI grid.
std::pair<int, int> alignment_factors(ExtractorKind kind, int A);

class Extractor {
 public:
  Extractor() = default;
  Extractor(ParameterStore& store, const std::string& name, const ExtractorSpec& spec, Rng& rng);

  // Raw output at the extractor's native extent. Throws ShapeError when the
  // MacPI extents are not multiples of A.
  Var operator()(Var macpi) const;
  const ExtractorSpec& spec() const { return spec_; }

 private:
  ExtractorSpec spec_;
  std::vector<Conv2d> layers_;
};

Var align_feature(ExtractorKind kind, int A, Var feature);

struct FdmConfig {
  int A = 2;
  int in_channels = 1;
  int extractor_channels = 8;
  int out_channels = 48;
  bool use_uwvh = true;  // false drops UW-EFE and VH-EFE
  bool enabled = true;   // false replaces the module with a plain 3x3 conv
};

struct FeatureBundle {
  std::vector<ExtractorKind> kinds;  // concat order
  std::vector<Var> aligned;
  Var concat;
  Var attended;
  Var fused;
};

class Fdm {
 public:
  Fdm() = default;
  Fdm(ParameterStore& store, const std::string& name, const FdmConfig& config, Rng& rng);

  Var operator()(Var macpi) const;
  // Full intermediate bundle; only meaningful when the module is enabled.
  FeatureBundle forward(Var macpi) const;

  const FdmConfig& config() const { return config_; }
  // Concat order [SFE | AFE | EFE-A, UW-EFE | EFE-B, VH-EFE], trimmed by use_uwvh.
  static std::vector<ExtractorKind> concat_order(bool use_uwvh);

 private:
  FdmConfig config_;
  std::vector<Extractor> extractors_;
  ChannelAttention attention_;
  Conv2d fuse_;
  Conv2d skip_;
  Conv2d plain_;
};

}  // namespace lfc
