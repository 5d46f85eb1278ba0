#include "lfc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lfc/errors.hpp"

namespace lfc {

// ---------------------------------------------------------------------------
// Configuration

namespace {

constexpr std::pair<const char*, bool Ablation::*> kAblationNames[] = {
    {"no_strip_conv", &Ablation::no_strip_conv},
    {"no_fdm", &Ablation::no_fdm},
    {"dual_fdm", &Ablation::dual_fdm},
    {"no_uwvh", &Ablation::no_uwvh},
    {"hyper_only", &Ablation::hyper_only},
};

constexpr int kConfigVersion = 1;
constexpr int kConfigFields = 14;

}  // namespace

std::uint8_t Ablation::bits() const {
  std::uint8_t b = 0;
  for (int i = 0; i < 5; ++i)
    if (this->*kAblationNames[i].second) b |= static_cast<std::uint8_t>(1u << i);
  return b;
}

Ablation Ablation::from_bits(std::uint8_t bits) {
  if (bits >> 5) throw FormatError("unknown ablation bits");
  Ablation a;
  for (int i = 0; i < 5; ++i) a.*kAblationNames[i].second = (bits >> i) & 1u;
  return a;
}

Ablation Ablation::parse(const std::string& list) {
  Ablation a;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item == "none") continue;
    bool found = false;
    for (const auto& [name, member] : kAblationNames) {
      if (item == name) {
        a.*member = true;
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown ablation flag '" + item + "'");
  }
  return a;
}

std::string Ablation::to_string() const {
  std::string s;
  for (const auto& [name, member] : kAblationNames) {
    if (this->*member) s += (s.empty() ? "" : ",") + std::string(name);
  }
  return s.empty() ? "none" : s;
}

CodecConfig CodecConfig::standard(int A, int channels) {
  CodecConfig c;
  c.A = A;
  c.channels = channels;
  return c;
}

CodecConfig CodecConfig::toy(int A, int channels) {
  CodecConfig c;
  c.A = A;
  c.channels = channels;
  c.extractor_channels = 4;
  c.fdm_channels = 24;
  c.N = 24;
  c.M = 32;
  c.hyper_channels = 8;
  c.hyper_hidden = 16;
  return c;
}

void CodecConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("codec config: " + m); };
  if (A < 2) fail("A must be >= 2");
  if (channels < 1 || channels > 255) fail("channels must be in [1, 255]");
  if (extractor_channels < 2 || extractor_channels % 2 != 0) fail("extractor channels must be even");
  if (fdm_channels < 1 || N < 2 || M < 1 || hyper_channels < 1 || hyper_hidden < 1) fail("widths must be positive");
  if (groups < 1 || M % groups != 0) fail("groups must divide M");
  if (strip_side < 1) fail("strip side must be >= 1");
  if (!(Q > 0.0) || !std::isfinite(Q)) fail("Q must be positive");
}

Tensor CodecConfig::to_record() const {
  return Tensor({kConfigFields},
                std::vector<double>{double(kConfigVersion), double(A), double(channels),
                                    double(extractor_channels), double(fdm_channels), double(N), double(M),
                                    double(hyper_channels), double(hyper_hidden), double(groups),
                                    double(strip_side), Q, double(ablation.bits()), 0.0});
}

CodecConfig CodecConfig::from_record(const Tensor& t) {
  if (t.rank() != 1 || t.dim(0) != kConfigFields || t[0] != kConfigVersion) {
    throw ConfigError("checkpoint: unsupported config record");
  }
  auto i = [&t](int k) { return static_cast<int>(t[k]); };
  CodecConfig c;
  c.A = i(1);
  c.channels = i(2);
  c.extractor_channels = i(3);
  c.fdm_channels = i(4);
  c.N = i(5);
  c.M = i(6);
  c.hyper_channels = i(7);
  c.hyper_hidden = i(8);
  c.groups = i(9);
  c.strip_side = i(10);
  c.Q = t[11];
  c.ablation = Ablation::from_bits(static_cast<std::uint8_t>(i(12)));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Quantization

Tensor quantize(const Tensor& t, double Q, QuantMode mode, Rng* rng) {
  if (!(Q > 0.0)) throw ParameterError("quantize: Q must be positive");
  Tensor out(t.shape(), t.values());
  switch (mode) {
    case QuantMode::round:
      for (double& v : out.data()) v = static_cast<double>(round_half_away(v / Q)) * Q;
      break;
    case QuantMode::noise: {
      if (!rng) throw ParameterError("quantize: noise mode needs a random source");
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      for (double& v : out.data()) v += Q * u(*rng);
      break;
    }
    case QuantMode::none: break;
  }
  return out;
}

Var quantize(Var y, double Q, QuantMode mode, Rng* rng) {
  switch (mode) {
    case QuantMode::none: return y;
    case QuantMode::round: return y.tape().constant(quantize(y.value(), Q, mode, rng));
    case QuantMode::noise: {
      Tensor noise = quantize(Tensor(y.shape()), Q, mode, rng);
      return add(y, y.tape().constant(std::move(noise)));
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Model

CodecModel::CodecModel(const CodecConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng(seed);
  const auto& ab = config.ablation;
  const bool strip = !ab.no_strip_conv;
  const int N = config.N, M = config.M;
  auto scm = [&](const std::string& name, int in, int out, Resample r, bool inverse) {
    return ScmBlock(store_, name, ScmConfig{in, out, r, config.strip_side, strip, inverse}, rng);
  };
  const FdmConfig fdm{config.A, config.channels, config.extractor_channels, config.fdm_channels, !ab.no_uwvh,
                      !ab.no_fdm};
  fdm_ = Fdm(store_, "ga.fdm", fdm, rng);
  for (int i = 0; i < 4; ++i) {
    down_[i] = scm("ga.scm" + std::to_string(i), i == 0 ? config.fdm_channels : N, N, Resample::down2, false);
    if (i < 3) down_res_[i] = ResBlock(store_, "ga.res" + std::to_string(i), N, rng);
  }
  ConvSpec c3{.in_channels = N, .out_channels = M, .kernel_h = 3, .kernel_w = 3};
  to_latent_ = Conv2d(store_, "ga.out", c3.same_padding(), rng);

  ConvSpec s3{.in_channels = M, .out_channels = N, .kernel_h = 3, .kernel_w = 3};
  from_latent_ = Conv2d(store_, "gs.in", s3.same_padding(), rng);
  for (int i = 0; i < 4; ++i) {
    up_[i] = scm("gs.scm" + std::to_string(i), N, N, Resample::up2, true);
    if (i < 3) up_res_[i] = ResBlock(store_, "gs.res" + std::to_string(i), N, rng);
  }
  ConvSpec o3{.in_channels = N, .out_channels = config.channels, .kernel_h = 3, .kernel_w = 3};
  to_image_ = Conv2d(store_, "gs.out", o3.same_padding(), rng);
  if (ab.dual_fdm) {
    dual_fdm_ = Fdm(store_, "gs.fdm", fdm, rng);
    dual_proj_ = Conv2d(store_, "gs.fdm_proj",
                        ConvSpec{.in_channels = config.fdm_channels, .out_channels = config.channels}, rng);
  }

  hyper_down_[0] = scm("ha.scm0", M, config.hyper_hidden, Resample::down2, false);
  hyper_down_[1] = scm("ha.scm1", config.hyper_hidden, config.hyper_channels, Resample::down2, false);
  hyper_up_[0] = scm("hs.scm0", config.hyper_channels, config.hyper_hidden, Resample::up2, true);
  hyper_up_[1] = scm("hs.scm1", config.hyper_hidden, M, Resample::up2, true);

  prior_ = FactorizedPrior(store_, "prior", config.hyper_channels, rng);
  context_ = ContextModel(store_, "ctx", ContextConfig{M, M, config.groups, ab.hyper_only}, rng);
}

std::unique_ptr<CodecModel> CodecModel::from_records(const std::vector<CheckpointRecord>& records) {
  const CheckpointRecord* meta = nullptr;
  double lambda = 0.0;
  for (const auto& r : records) {
    if (r.name == "meta.config") meta = &r;
    if (r.name == "meta.lambda" && r.value.size() == 1) lambda = r.value[0];
  }
  if (!meta) throw ConfigError("checkpoint has no codec configuration record");
  auto model = std::make_unique<CodecModel>(CodecConfig::from_record(meta->value), 0);
  model->store_.assign(records);
  model->lambda_ = lambda;
  return model;
}

std::unique_ptr<CodecModel> CodecModel::load(const std::filesystem::path& path) {
  return from_records(read_checkpoint_file(path));
}

std::vector<CheckpointRecord> CodecModel::records() const {
  auto r = store_.records();
  r.push_back({"meta.config", config_.to_record()});
  r.push_back({"meta.lambda", Tensor({1}, lambda_)});
  return r;
}

void CodecModel::save(const std::filesystem::path& path) const { write_checkpoint_file(path, records()); }

std::uint64_t CodecModel::hash() const {
  const auto bytes = serialize_checkpoint(records());
  return fnv1a64(bytes.data(), bytes.size());
}

Var CodecModel::analysis(Var x) const {
  if (x.value().rank() != 4 || x.dim(1) != config_.channels || x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0) {
    throw ShapeError("analysis: expected (N, " + std::to_string(config_.channels) +
                     ", 16k, 16k) MacPI, got " + to_string(x.shape()));
  }
  Var h = fdm_(x);
  for (int i = 0; i < 4; ++i) {
    h = down_[i](h);
    if (i < 3) h = down_res_[i](h);
  }
  return to_latent_(h);
}

Var CodecModel::synthesis(Var y_hat) const {
  if (y_hat.value().rank() != 4 || y_hat.dim(1) != config_.M) {
    throw ShapeError("synthesis: expected " + std::to_string(config_.M) + " latent channels, got " +
                     to_string(y_hat.shape()));
  }
  Var h = from_latent_(y_hat);
  for (int i = 0; i < 4; ++i) {
    h = up_[i](h);
    if (i < 3) h = up_res_[i](h);
  }
  Var x = to_image_(h);
  if (config_.ablation.dual_fdm) x = add(x, dual_proj_(dual_fdm_(x)));
  return x;
}

Var CodecModel::hyper_analysis(Var y) const {
  if (y.dim(1) != config_.M || y.dim(2) % 4 != 0 || y.dim(3) % 4 != 0) {
    throw ShapeError("hyper analysis: latent " + to_string(y.shape()) + " incompatible");
  }
  return hyper_down_[1](hyper_down_[0](y));
}

Var CodecModel::hyper_synthesis(Var z_hat) const {
  if (z_hat.dim(1) != config_.hyper_channels) throw ShapeError("hyper synthesis: channel mismatch");
  return hyper_up_[1](hyper_up_[0](z_hat));
}

CodecModel::Forward CodecModel::forward(Var x, QuantMode mode, Rng* rng) const {
  const double Q = config_.Q;
  Forward f;
  f.y = analysis(x);
  f.z = hyper_analysis(f.y);
  f.z_hat = quantize(f.z, Q, mode, rng);
  f.z_likelihood = lower_bound(prior_.likelihood(f.z_hat, 0.5 * Q), kLikelihoodBound);
  f.hyper = hyper_synthesis(f.z_hat);
  f.y_hat = quantize(f.y, Q, mode, rng);
  f.params = context_.predict(f.hyper, f.y_hat);
  f.y_likelihood =
      lower_bound(gaussian_likelihood(f.y_hat, f.params.mu, f.params.sigma, 0.5 * Q), kLikelihoodBound);
  f.y_bits = estimate_bits(f.y_likelihood);
  f.z_bits = estimate_bits(f.z_likelihood);
  f.x_hat = synthesis(f.y_hat);
  return f;
}

// ---------------------------------------------------------------------------
// Tensor views of light fields

Tensor lf_to_tensor(const LightField4D& lf) {
  const MacPI m = sai_to_macpi(lf);
  const double lo = lf.range().lo, span = lf.range().hi - lf.range().lo;
  if (!(span > 0.0)) throw ParameterError("light field value range is empty");
  Tensor t({1, m.channels(), m.rows(), m.cols()});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (m.pixels()[i] - lo) / span;
  return t;
}

LightField4D tensor_to_lf(const Tensor& t, int A, ValueRange range) {
  if (t.rank() != 4 || t.dim(0) != 1) throw ShapeError("tensor_to_lf: expected a single (1, C, AH, AW) tensor");
  std::vector<double> px(t.size());
  const double span = range.hi - range.lo;
  for (std::size_t i = 0; i < t.size(); ++i) px[i] = range.lo + std::clamp(t[i], 0.0, 1.0) * span;
  return macpi_to_sai(make_macpi(t.dim(1), A, t.dim(2), t.dim(3), std::move(px), range));
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

struct Site {
  int c, i, j;
};

// Coding order inside a group: anchors, then non-anchors; each phase runs
// channel-major over raster sites.
std::vector<Site> phase_sites(int g, int phase, int gc, int H, int W) {
  std::vector<Site> s;
  for (int c = g * gc; c < (g + 1) * gc; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        if (((i + j) % 2 == 0) == (phase == 0)) s.push_back({c, i, j});
  return s;
}

double bits_of(double p) { return -std::log2(std::max(p, kLikelihoodBound)); }

// Runs the decoder's group/phase schedule. `visit(g, phase, mu, sigma)` must
// fill the latent sites of that phase in `y` before returning.
template <class Visit>
void decoder_schedule(const CodecModel& model, Var hyper, Tensor& y, Visit visit) {
  Tape& tape = hyper.tape();
  for (int g = 0; g < model.context().config().groups; ++g) {
    for (int phase = 0; phase < 2; ++phase) {
      const GaussianParams p = model.context().predict_group(hyper, tape.constant(Tensor(y.shape(), y.values())), g);
      visit(g, phase, p.mu.value(), p.sigma.value());
    }
  }
}

void check_config_matches(const BitstreamHeader& h, const CodecConfig& c) {
  if (h.A != c.A || h.channels != c.channels || h.flags != c.ablation.bits() || h.Q != c.Q) {
    throw DecodeError("bitstream header does not match the checkpoint configuration", 0);
  }
  if ((h.A * h.padded_H) % kPadMultiple != 0 || (h.A * h.padded_W) % kPadMultiple != 0) {
    throw DecodeError("bitstream: padded extents not aligned", 0);
  }
}

}  // namespace

EncodeResult encode_lf(const LightField4D& lf, const CodecModel& model, const EncodeOptions& options) {
  const CodecConfig& cfg = model.config();
  if (lf.U() != lf.V()) throw ShapeError("encode: angular grid must be square");
  if (lf.U() != cfg.A || lf.channels() != cfg.channels) {
    throw ShapeError("encode: light field (A=" + std::to_string(lf.U()) + ", channels=" +
                     std::to_string(lf.channels()) + ") does not match the checkpoint");
  }
  const auto [padded, rec] = pad_lf(lf, kPadMultiple);
  const double Q = cfg.Q;

  Tape tape;
  tape.set_grad_enabled(false);
  const Var x = tape.constant(lf_to_tensor(padded));
  const Var y = model.analysis(x);
  const Var z = model.hyper_analysis(y);
  const Var z_hat = quantize(z, Q, QuantMode::round, nullptr);
  const Var hyper = model.hyper_synthesis(z_hat);
  const Var y_hat = quantize(y, Q, QuantMode::round, nullptr);

  EncodeResult r;
  r.latents.z_shape = z_hat.shape();
  r.latents.y_shape = y_hat.shape();
  for (double v : z.value().data()) r.latents.z.push_back(round_half_away(v / Q));
  for (double v : y.value().data()) r.latents.y.push_back(round_half_away(v / Q));

  Bitstream bs;
  {
    RangeEncoder enc;
    StreamStats st;
    const int C = z_hat.dim(1);
    const std::size_t hw = static_cast<std::size_t>(z_hat.dim(2)) * z_hat.dim(3);
    for (int c = 0; c < C; ++c) {
      const FrequencyTable table = model.prior().table(c, Q);
      for (std::size_t i = 0; i < hw; ++i) {
        const std::int64_t k = r.latents.z[c * hw + i];
        encode_symbol(enc, table, k);
        st.estimated_bits += bits_of(model.prior().bin_probability(c, static_cast<double>(k) * Q, 0.5 * Q));
      }
    }
    bs.streams.push_back(enc.finish());
    st.bytes = bs.streams.back().size();
    r.streams.push_back(st);
  }

  const Tensor& Y = y_hat.value();
  const int gc = model.context().group_channels();
  const int H = Y.dim(2), W = Y.dim(3);
  for (int g = 0; g < cfg.groups; ++g) {
    const GaussianParams p = model.context().predict_group(hyper, y_hat, g);
    RangeEncoder enc;
    StreamStats st;
    for (int phase = 0; phase < 2; ++phase) {
      for (const Site& s : phase_sites(g, phase, gc, H, W)) {
        const int lc = s.c - g * gc;
        const double mu = p.mu.value().at(0, lc, s.i, s.j) / Q;
        const double sigma = p.sigma.value().at(0, lc, s.i, s.j) / Q;
        const std::int64_t k = round_half_away(Y.at(0, s.c, s.i, s.j) / Q);
        encode_symbol(enc, gaussian_table(mu, sigma), k);
        st.estimated_bits += bits_of(gaussian_bin(static_cast<double>(k), mu, sigma));
      }
    }
    bs.streams.push_back(enc.finish());
    st.bytes = bs.streams.back().size();
    r.streams.push_back(st);
  }

  auto& h = bs.header;
  h.layout = options.layout;
  h.channels = cfg.channels;
  h.lambda_index = options.lambda_index;
  h.A = cfg.A;
  h.H = rec.original_h;
  h.W = rec.original_w;
  h.padded_H = rec.padded_h;
  h.padded_W = rec.padded_w;
  h.flags = cfg.ablation.bits();
  h.Q = Q;
  h.range_lo = lf.range().lo;
  h.range_hi = lf.range().hi;
  h.model_hash = model.hash();
  r.header = h;
  r.bytes = serialize_bitstream(bs);
  for (const auto& st : r.streams) r.estimated_payload_bits += st.estimated_bits;
  r.bpp = 8.0 * static_cast<double>(r.bytes.size()) / (static_cast<double>(cfg.A) * cfg.A * lf.H() * lf.W());
  return r;
}

DecodeResult decode_lf(std::span<const std::uint8_t> bytes, const CodecModel& model) {
  const Bitstream bs = parse_bitstream(bytes);
  const BitstreamHeader& h = bs.header;
  const CodecConfig& cfg = model.config();
  if (h.model_hash != model.hash()) throw DecodeError("bitstream was produced with a different checkpoint", 0);
  check_config_matches(h, cfg);
  if (bs.streams.size() != static_cast<std::size_t>(1 + cfg.groups)) {
    throw DecodeError("bitstream: expected " + std::to_string(1 + cfg.groups) + " streams", 0);
  }
  const double Q = cfg.Q;
  const int rows = h.A * h.padded_H, cols = h.A * h.padded_W;

  DecodeResult out;
  out.header = h;
  out.latents.z_shape = {1, cfg.hyper_channels, rows / 64, cols / 64};
  out.latents.y_shape = {1, cfg.M, rows / 16, cols / 16};

  Tensor z_hat(out.latents.z_shape);
  {
    RangeDecoder dec(bs.streams[0]);
    const std::size_t hw = static_cast<std::size_t>(z_hat.dim(2)) * z_hat.dim(3);
    for (int c = 0; c < cfg.hyper_channels; ++c) {
      const FrequencyTable table = model.prior().table(c, Q);
      for (std::size_t i = 0; i < hw; ++i) {
        const std::int64_t k = decode_symbol(dec, table);
        out.latents.z.push_back(k);
        z_hat[c * hw + i] = static_cast<double>(k) * Q;
      }
    }
  }

  Tape tape;
  tape.set_grad_enabled(false);
  const Var hyper = model.hyper_synthesis(tape.constant(z_hat));
  Tensor y_hat(out.latents.y_shape);
  std::vector<std::int64_t> symbols(y_hat.size());
  const int gc = model.context().group_channels();
  const int H = y_hat.dim(2), W = y_hat.dim(3);
  std::unique_ptr<RangeDecoder> dec;
  decoder_schedule(model, hyper, y_hat, [&](int g, int phase, const Tensor& mu, const Tensor& sigma) {
    if (phase == 0) dec = std::make_unique<RangeDecoder>(bs.streams[1 + g]);
    for (const Site& s : phase_sites(g, phase, gc, H, W)) {
      const int lc = s.c - g * gc;
      const std::int64_t k = decode_symbol(*dec, gaussian_table(mu.at(0, lc, s.i, s.j) / Q, sigma.at(0, lc, s.i, s.j) / Q));
      y_hat.at(0, s.c, s.i, s.j) = static_cast<double>(k) * Q;
      symbols[(static_cast<std::size_t>(s.c) * H + s.i) * W + s.j] = k;
    }
  });
  out.latents.y = std::move(symbols);

  const Var x_hat = model.synthesis(tape.constant(y_hat));
  const LightField4D padded = tensor_to_lf(x_hat.value(), h.A, {h.range_lo, h.range_hi});
  out.lf = crop_lf(padded, {h.H, h.W, h.padded_H, h.padded_W});
  return out;
}

ContextTrace encoder_side_params(const CodecModel& model, const Tensor& hyper, const Tensor& y_hat) {
  Tape tape;
  tape.set_grad_enabled(false);
  const GaussianParams p = model.context().predict(tape.constant(hyper), tape.constant(y_hat));
  return {p.mu.value(), p.sigma.value()};
}

ContextTrace decoder_side_params(const CodecModel& model, const Tensor& hyper, const Tensor& y_hat) {
  Tape tape;
  tape.set_grad_enabled(false);
  const Var hv = tape.constant(hyper);
  Tensor partial(y_hat.shape());
  ContextTrace t{Tensor(y_hat.shape()), Tensor(y_hat.shape())};
  const int gc = model.context().group_channels();
  const int H = y_hat.dim(2), W = y_hat.dim(3);
  decoder_schedule(model, hv, partial, [&](int g, int phase, const Tensor& mu, const Tensor& sigma) {
    for (const Site& s : phase_sites(g, phase, gc, H, W)) {
      const int lc = s.c - g * gc;
      t.mu.at(0, s.c, s.i, s.j) = mu.at(0, lc, s.i, s.j);
      t.sigma.at(0, s.c, s.i, s.j) = sigma.at(0, lc, s.i, s.j);
      partial.at(0, s.c, s.i, s.j) = y_hat.at(0, s.c, s.i, s.j);
    }
  });
  return t;
}

}  // namespace lfc
