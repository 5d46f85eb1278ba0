#include "lfc/disentangle.hpp"

#include "lfc/errors.hpp"

namespace lfc {

const char* extractor_name(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::SFE: return "sfe";
    case ExtractorKind::AFE: return "afe";
    case ExtractorKind::EFE_A: return "efe_a";
    case ExtractorKind::EFE_B: return "efe_b";
    case ExtractorKind::UW_EFE: return "uw_efe";
    case ExtractorKind::VH_EFE: return "vh_efe";
  }
  return "?";
}

int extractor_layers(ExtractorKind kind) {
  return kind == ExtractorKind::UW_EFE || kind == ExtractorKind::VH_EFE ? 2 : 1;
}

ConvSpec extractor_conv(const ExtractorSpec& spec, int layer) {
  const int A = spec.A;
  if (A < 2) throw ShapeError("extractor: angular extent must be >= 2");
  if (layer < 0 || layer >= extractor_layers(spec.kind)) throw ShapeError("extractor: no such layer");
  const int in = layer == 0 ? spec.in_channels : spec.out_channels;
  ConvSpec c{.in_channels = in, .out_channels = spec.out_channels};
  const int epi_pad = A * (A - 1) / 2;
  switch (spec.kind) {
    case ExtractorKind::SFE:
      c.kernel_h = c.kernel_w = 3;
      c.dilation_h = c.dilation_w = A;
      c.symmetric_padding(A, A);
      break;
    case ExtractorKind::AFE:
      c.kernel_h = c.kernel_w = A;
      c.stride_h = c.stride_w = A;
      break;
    case ExtractorKind::EFE_A:
      c.kernel_w = A * A;
      c.stride_w = A;
      c.symmetric_padding(0, epi_pad);
      break;
    case ExtractorKind::EFE_B:
      c.kernel_h = A * A;
      c.stride_h = A;
      c.symmetric_padding(epi_pad, 0);
      break;
    case ExtractorKind::UW_EFE:
      if (layer == 0) {
        c.kernel_w = A;
        c.stride_w = A;
      } else {
        c.kernel_h = A;
        c.same_padding();
      }
      break;
    case ExtractorKind::VH_EFE:
      if (layer == 0) {
        c.kernel_h = A;
        c.stride_h = A;
      } else {
        c.kernel_w = A;
        c.same_padding();
      }
      break;
  }
  return c;
}

std::pair<int, int> extractor_extent(const ExtractorSpec& spec, int rows, int cols) {
  for (int l = 0; l < extractor_layers(spec.kind); ++l) {
    const ConvSpec c = extractor_conv(spec, l);
    const int r = c.out_h(rows), w = c.out_w(cols);
    rows = r;
    cols = w;
  }
  return {rows, cols};
}

std::pair<int, int> alignment_factors(ExtractorKind kind, int A) {
  switch (kind) {
    case ExtractorKind::SFE: return {1, 1};
    case ExtractorKind::AFE: return {A, A};
    case ExtractorKind::EFE_A:
    case ExtractorKind::UW_EFE: return {1, A};
    case ExtractorKind::EFE_B:
    case ExtractorKind::VH_EFE: return {A, 1};
  }
  return {1, 1};
}

Extractor::Extractor(ParameterStore& store, const std::string& name, const ExtractorSpec& spec, Rng& rng)
    : spec_(spec) {
  for (int l = 0; l < extractor_layers(spec.kind); ++l)
    layers_.emplace_back(store, name + ".l" + std::to_string(l), extractor_conv(spec, l), rng);
}

Var Extractor::operator()(Var macpi) const {
  const int A = spec_.A;
  if (macpi.value().rank() != 4 || macpi.dim(2) % A != 0 || macpi.dim(3) % A != 0) {
    throw ShapeError(std::string(extractor_name(spec_.kind)) + ": MacPI extent " +
                     to_string(macpi.shape()) + " not divisible by A=" + std::to_string(A));
  }
  Var x = macpi;
  for (const Conv2d& layer : layers_) x = layer(x);
  return x;
}

Var align_feature(ExtractorKind kind, int A, Var feature) {
  const auto [fh, fw] = alignment_factors(kind, A);
  return fh == 1 && fw == 1 ? feature : upsample_nearest(feature, fh, fw);
}

std::vector<ExtractorKind> Fdm::concat_order(bool use_uwvh) {
  if (use_uwvh) {
    return {ExtractorKind::SFE,    ExtractorKind::AFE,   ExtractorKind::EFE_A,
            ExtractorKind::UW_EFE, ExtractorKind::EFE_B, ExtractorKind::VH_EFE};
  }
  return {ExtractorKind::SFE, ExtractorKind::AFE, ExtractorKind::EFE_A, ExtractorKind::EFE_B};
}

Fdm::Fdm(ParameterStore& store, const std::string& name, const FdmConfig& config, Rng& rng)
    : config_(config) {
  if (!config.enabled) {
    ConvSpec c{.in_channels = config.in_channels, .out_channels = config.out_channels, .kernel_h = 3, .kernel_w = 3};
    plain_ = Conv2d(store, name + ".plain", c.same_padding(), rng);
    return;
  }
  const auto order = concat_order(config.use_uwvh);
  for (ExtractorKind kind : order) {
    extractors_.emplace_back(store, name + "." + extractor_name(kind),
                             ExtractorSpec{kind, config.A, config.in_channels, config.extractor_channels}, rng);
  }
  const int concat_channels = config.extractor_channels * static_cast<int>(order.size());
  attention_ = ChannelAttention(store, name + ".attention", concat_channels, rng);
  fuse_ = Conv2d(store, name + ".fuse", ConvSpec{.in_channels = concat_channels, .out_channels = config.out_channels}, rng);
  skip_ = Conv2d(store, name + ".skip", ConvSpec{.in_channels = config.in_channels, .out_channels = config.out_channels}, rng);
}

FeatureBundle Fdm::forward(Var macpi) const {
  if (!config_.enabled) throw StateError("fdm: module disabled by configuration");
  FeatureBundle b;
  b.kinds = concat_order(config_.use_uwvh);
  for (std::size_t i = 0; i < extractors_.size(); ++i)
    b.aligned.push_back(align_feature(b.kinds[i], config_.A, extractors_[i](macpi)));
  b.concat = concat(b.aligned);
  b.attended = attention_(b.concat);
  b.fused = add(fuse_(b.attended), skip_(macpi));
  return b;
}

Var Fdm::operator()(Var macpi) const {
  if (!config_.enabled) return plain_(macpi);
  return forward(macpi).fused;
}

}  // namespace lfc
