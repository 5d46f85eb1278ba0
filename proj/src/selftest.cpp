#include "lfc/selftest.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>
#include <string>
#include <vector>

#include "lfc/codec.hpp"
#include "lfc/gradcheck.hpp"
#include "lfc/metrics.hpp"
#include "lfc/range_coder.hpp"

namespace lfc {

namespace {

struct Suite {
  const char* name;
  std::function<std::string(std::uint64_t)> run;  // empty string on success
};

Tensor random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(s);
  for (double& v : t.data()) v = n(rng);
  return t;
}

std::string representation_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> a(2, 5), hw(1, 3), ch(0, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int A = a(rng), H = 16 * hw(rng), W = 16 * hw(rng), C = ch(rng) ? 3 : 1;
    LightField4D lf(C, A, A, H, W);
    for (double& v : lf.samples()) v = u(rng);
    if (macpi_to_sai(sai_to_macpi(lf)) != lf) return "SAI/MacPI round trip changed samples";
    const auto [padded, rec] = pad_lf(lf, 16);
    if (crop_lf(padded, rec) != lf) return "pad/crop round trip changed samples";
  }
  return {};
}

std::string gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  const double tol = 1e-4;
  auto fail = [&](const char* what, const GradCheckResult& r) {
    return std::string(what) + " error " + std::to_string(r.max_error) + " at " + r.worst;
  };
  {
    ParameterStore store;
    ConvSpec spec{.in_channels = 2, .out_channels = 3, .kernel_h = 3, .kernel_w = 3};
    Conv2d conv(store, "conv", spec.same_padding(), rng);
    const Tensor x = random_tensor({1, 2, 4, 4}, rng);
    const auto r = check_parameter_gradient(
        [&](Tape& t) { return random_projection(conv(t.constant(Tensor(x.shape(), x.values()))), seed); }, store);
    if (!r.passed(tol)) return fail("conv2d weights", r);
    const auto ri = check_input_gradient([&](Tape&, Var v) { return random_projection(conv(v), seed); }, x);
    if (!ri.passed(tol)) return fail("conv2d input", ri);
  }
  {
    ParameterStore store;
    Gdn gdn(store, "gdn", 2, false);
    const Tensor x = random_tensor({1, 2, 3, 3}, rng);
    const auto r = check_input_gradient([&](Tape&, Var v) { return random_projection(gdn(v), seed); }, x);
    if (!r.passed(tol)) return fail("gdn", r);
  }
  {
    ParameterStore store;
    ScmBlock block(store, "scm", ScmConfig{2, 2, Resample::none, 3, true, false}, rng);
    const Tensor x = random_tensor({1, 2, 8, 8}, rng);
    const auto r = check_input_gradient([&](Tape&, Var v) { return random_projection(block(v), seed); }, x);
    if (!r.passed(tol)) return fail("scm", r);
  }
  {
    CodecModel model(CodecConfig::toy(2, 1), seed);
    Tensor x({1, 1, 64, 64});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : x.data()) v = u(rng);
    GradCheckOptions opt;
    opt.max_entries = 30;
    opt.seed = seed;
    const auto r = check_parameter_gradient(
        [&](Tape& t) {
          const Var xv = t.constant(Tensor(x.shape(), x.values()));
          const auto f = model.forward(xv, QuantMode::none, nullptr);
          return add(mse(f.x_hat, xv), scale(add(f.y_bits, f.z_bits), 1e-3 / 4096.0));
        },
        model.parameters(), opt);
    if (!r.passed(1e-3)) return fail("codec end-to-end", r);
  }
  return {};
}

std::string coder_suite(std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> mu(-20.0, 20.0), ls(std::log(0.04), std::log(50.0));
    std::vector<std::pair<double, double>> params;
    std::vector<std::int64_t> symbols;
    RangeEncoder enc;
    for (int i = 0; i < 500; ++i) {
      const double m = mu(rng), s = std::exp(ls(rng));
      std::normal_distribution<double> n(m, s * 1.5);
      const std::int64_t k = round_half_away(n(rng));
      params.emplace_back(m, s);
      symbols.push_back(k);
      encode_symbol(enc, gaussian_table(m, s), k);
    }
    const auto bytes = enc.finish();
    RangeDecoder dec(bytes);
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (decode_symbol(dec, gaussian_table(params[i].first, params[i].second)) != symbols[i]) {
        return "range coder round trip mismatch at symbol " + std::to_string(i);
      }
    }
  }
  return {};
}

std::string codec_suite(std::uint64_t seed) {
  CodecModel model(CodecConfig::toy(2, 1), seed);
  Rng rng(seed);
  LightField4D lf(1, 2, 2, 32, 32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : lf.samples()) v = u(rng);
  const EncodeResult a = encode_lf(lf, model);
  const EncodeResult b = encode_lf(lf, model);
  if (a.bytes != b.bytes) return "encoding is not deterministic";
  const DecodeResult d = decode_lf(a.bytes, model);
  if (d.latents != a.latents) return "decoded latents differ from the encoder's";
  return {};
}

std::string bd_suite(std::uint64_t) {
  const std::vector<RDPoint> c = {{0.1, 30.0}, {0.2, 33.0}, {0.4, 35.5}, {0.8, 37.2}, {1.6, 38.4}};
  std::vector<RDPoint> doubled = c, shifted = c;
  for (auto& p : doubled) p.bpp *= 2.0;
  for (auto& p : shifted) p.psnr += 1.0;
  if (bd_rate(c, c) != 0.0 || bd_psnr(c, c) != 0.0) return "self comparison is not exactly zero";
  if (std::abs(bd_rate(doubled, c) - 100.0) > 0.1) return "rate-doubled curve not +100%";
  if (std::abs(bd_psnr(shifted, c) - 1.0) > 0.01) return "shifted curve not +1 dB";
  return {};
}

}  // namespace

int run_selftest(std::ostream& out, const SelftestOptions& options) {
  testing::set_gradient_bug(options.inject_gradient_bug);
  const std::vector<Suite> suites = {
      {"representation", representation_suite}, {"gradients", gradient_suite}, {"range-coder", coder_suite},
      {"codec", codec_suite},                   {"bd-metrics", bd_suite},
  };
  int failures = 0;
  for (const auto& s : suites) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string err;
    try {
      err = s.run(options.seed);
    } catch (const std::exception& e) {
      err = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << (err.empty() ? "PASS " : "FAIL ") << std::left << std::setw(16) << s.name << std::right << std::fixed
        << std::setprecision(2) << std::setw(8) << secs << " s";
    if (!err.empty()) out << "  " << err;
    out << '\n';
    if (!err.empty()) ++failures;
  }
  testing::set_gradient_bug(false);
  out << (failures ? "selftest FAILED" : "selftest passed") << '\n';
  return failures;
}

}  // namespace lfc
