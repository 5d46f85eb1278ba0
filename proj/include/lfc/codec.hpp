#pragma once

// End-to-end light-field codec:
//
//   x (MacPI) -> g_a -> y -> q -> y_hat ---------------------> g_s -> x_hat
//                        |                     ^
//                        h_a -> z -> q -> z_hat -> h_s -> context -> (mu, sigma)
//
// g_a: FDM, [SCM down2 + ResBlock] x 3, SCM down2, 3x3 conv to M channels.
// g_s mirrors it with transposed-conv SCMs and IGDN.

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lfc/bitstream.hpp"
#include "lfc/disentangle.hpp"
#include "lfc/entropy.hpp"
#include "lfc/lf_repr.hpp"
#include "lfc/scm.hpp"

namespace lfc {

inline constexpr std::array<double, 5> kLambdaLadder = {0.00015, 0.0002, 0.0006, 0.001, 0.003};

// MacPI extents are padded to this multiple: four stride-2 stages in g_a
// and two more in h_a.
inline constexpr int kPadMultiple = 64;

struct Ablation {
  bool no_strip_conv = false;
  bool no_fdm = false;
  bool dual_fdm = false;
  bool no_uwvh = false;
  bool hyper_only = false;

  std::uint8_t bits() const;
  static Ablation from_bits(std::uint8_t bits);
  // Comma-separated flag names; "" or "none" for no flags.
  static Ablation parse(const std::string& list);
  std::string to_string() const;
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct CodecConfig {
  int A = 5;
  int channels = 1;
  int extractor_channels = 8;
  int fdm_channels = 48;
  int N = 48;
  int M = 64;
  int hyper_channels = 16;
  int hyper_hidden = 48;
  int groups = 4;
  int strip_side = 3;
  double Q = 1.0;
  Ablation ablation;

  // Channel widths of the full model.
  static CodecConfig standard(int A, int channels);
  // Narrow widths for desk-scale training.
  static CodecConfig toy(int A, int channels);

  void validate() const;
  Tensor to_record() const;
  static CodecConfig from_record(const Tensor& t);
  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

// noise: y + Q*u, u ~ U[-1/2, 1/2); round: round_half_away(y/Q)*Q;
// none: noise mode with u = 0 (used by gradient checks).
enum class QuantMode { noise, round, none };

Tensor quantize(const Tensor& t, double Q, QuantMode mode, Rng* rng);
Var quantize(Var y, double Q, QuantMode mode, Rng* rng);

class CodecModel {
 public:
  CodecModel(const CodecConfig& config, std::uint64_t seed);

  static std::unique_ptr<CodecModel> from_records(const std::vector<CheckpointRecord>& records);
  static std::unique_ptr<CodecModel> load(const std::filesystem::path& path);

  std::vector<CheckpointRecord> records() const;
  void save(const std::filesystem::path& path) const;
  std::uint64_t hash() const;

  const CodecConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  double lambda() const { return lambda_; }
  void set_lambda(double l) { lambda_ = l; }

  Var analysis(Var x) const;
  Var synthesis(Var y_hat) const;
  Var hyper_analysis(Var y) const;
  Var hyper_synthesis(Var z_hat) const;
  const FactorizedPrior& prior() const { return prior_; }
  const ContextModel& context() const { return context_; }
  const Fdm& fdm() const { return fdm_; }

  struct Forward {
    Var y, y_hat, z, z_hat, hyper;
    GaussianParams params;
    Var y_likelihood, z_likelihood;
    Var y_bits, z_bits;
    Var x_hat;
  };
  Forward forward(Var x, QuantMode mode, Rng* rng) const;

 private:
  CodecConfig config_;
  double lambda_ = 0.0;
  ParameterStore store_;
  Fdm fdm_;
  std::array<ScmBlock, 4> down_;
  std::array<ResBlock, 3> down_res_;
  Conv2d to_latent_;
  Conv2d from_latent_;
  std::array<ScmBlock, 4> up_;
  std::array<ResBlock, 3> up_res_;
  Conv2d to_image_;
  Fdm dual_fdm_;
  Conv2d dual_proj_;
  std::array<ScmBlock, 2> hyper_down_;
  std::array<ScmBlock, 2> hyper_up_;
  FactorizedPrior prior_;
  ContextModel context_;
};

// Light field <-> normalized (1, C, A*H, A*W) MacPI tensor in [0, 1].
Tensor lf_to_tensor(const LightField4D& lf);
LightField4D tensor_to_lf(const Tensor& t, int A, ValueRange range);

struct LatentPack {
  Shape y_shape;
  std::vector<std::int64_t> y;
  Shape z_shape;
  std::vector<std::int64_t> z;
  friend bool operator==(const LatentPack&, const LatentPack&) = default;
};

struct StreamStats {
  std::size_t bytes = 0;
  double estimated_bits = 0.0;
};

struct EncodeOptions {
  int lambda_index = 0;
  Layout layout = Layout::sai;
};

struct EncodeResult {
  std::vector<std::uint8_t> bytes;
  BitstreamHeader header;
  LatentPack latents;
  std::vector<StreamStats> streams;  // z first, then one per group
  double bpp = 0.0;                  // file bits / (A^2 H W)
  double estimated_payload_bits = 0.0;
};

struct DecodeResult {
  LightField4D lf;
  LatentPack latents;
  BitstreamHeader header;
};

EncodeResult encode_lf(const LightField4D& lf, const CodecModel& model, const EncodeOptions& options = {});
DecodeResult decode_lf(std::span<const std::uint8_t> bytes, const CodecModel& model);

// Mean and scale fields the decoder would use, produced group by group from
// partially decoded latents. Exposed to check encoder/decoder agreement.
struct ContextTrace {
  Tensor mu;
  Tensor sigma;
};
ContextTrace decoder_side_params(const CodecModel& model, const Tensor& hyper, const Tensor& y_hat);
ContextTrace encoder_side_params(const CodecModel& model, const Tensor& hyper, const Tensor& y_hat);

}  // namespace lfc
