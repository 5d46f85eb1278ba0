#include <doctest.h>

#include <filesystem>

#include "lfc/codec.hpp"
#include "lfc/errors.hpp"
#include "lfc/gradcheck.hpp"
#include "lfc/metrics.hpp"
#include "test_util.hpp"

using namespace lfc;
namespace fs = std::filesystem;

namespace {

Tensor eval(const std::function<Var(Var)>& f, const Tensor& x) {
  Tape t;
  t.set_grad_enabled(false);
  return f(t.constant(test::copy(x))).value();
}

void zero_params(CodecModel& m) {
  for (std::size_t p = 0; p < m.parameters().size(); ++p)
    for (double& v : m.parameters().tensor(p).data()) v = 0.0;
}

std::vector<Ablation> ablation_variants() {
  std::vector<Ablation> v(6);
  v[1].no_strip_conv = true;
  v[2].no_fdm = true;
  v[3].dual_fdm = true;
  v[4].no_uwvh = true;
  v[5].no_fdm = v[5].no_strip_conv = true;
  return v;
}

}  // namespace

TEST_CASE("analysis and synthesis shapes") {
  const CodecModel m(CodecConfig::standard(2, 1), 1);
  const Tensor y = eval([&](Var v) { return m.analysis(v); }, Tensor({1, 1, 64, 64}, 0.3));
  CHECK(y.shape() == Shape{1, 64, 4, 4});
  CHECK(eval([&](Var v) { return m.synthesis(v); }, y).shape() == Shape{1, 1, 64, 64});
  const Tensor z = eval([&](Var v) { return m.hyper_analysis(v); }, Tensor({1, 64, 16, 16}, 0.1));
  CHECK(z.shape() == Shape{1, 16, 4, 4});
  CHECK(eval([&](Var v) { return m.hyper_synthesis(v); }, z).shape()[2] == 16);
  Tape t;
  CHECK_THROWS_AS(m.analysis(t.constant(Tensor({1, 1, 60, 64}))), ShapeError);
}

TEST_CASE("zero weights map zero input to zero latents") {
  CodecModel m(CodecConfig::toy(2, 1), 2);
  zero_params(m);
  const Tensor y = eval([&](Var v) { return m.analysis(v); }, Tensor({1, 1, 64, 64}));
  for (double v : y.data()) CHECK(v == 0.0);
  const Tensor z = eval([&](Var v) { return m.hyper_analysis(v); }, Tensor({1, 32, 16, 16}));
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("analysis gradient with respect to the input") {
  const CodecModel m(CodecConfig::toy(2, 1), 3);
  Rng rng(3);
  Tensor x({1, 1, 64, 64});
  for (double& v : x.data()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  GradCheckOptions opt;
  opt.max_entries = 40;
  const auto r = check_input_gradient([&](Tape&, Var v) { return sum(m.analysis(v)); }, x, opt);
  INFO(r.worst);
  CHECK(r.passed(1e-4));
}

TEST_CASE("quantization") {
  Rng rng(4);
  Tape t;
  const Tensor r = quantize(Tensor({3}, {0.6, -0.5, 1.49}), 1.0, QuantMode::round, nullptr);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == -1.0);
  CHECK(r[2] == 1.0);
  CHECK(quantize(Tensor({1}, 0.74), 0.5, QuantMode::round, nullptr)[0] == 0.5);
  const Tensor y = test::random_tensor({100000}, rng, 3.0);
  const Tensor n = quantize(y, 1.0, QuantMode::noise, &rng);
  for (std::size_t i = 0; i < y.size(); ++i) {
    REQUIRE(n[i] >= y[i] - 0.5);
    REQUIRE(n[i] < y[i] + 0.5);
  }
  CHECK(quantize(y, 1.0, QuantMode::none, nullptr) == y);
  CHECK_THROWS(quantize(y, 1.0, QuantMode::noise, nullptr));
}

TEST_CASE("config and ablation records") {
  for (const Ablation& a : ablation_variants()) {
    CHECK(Ablation::from_bits(a.bits()) == a);
    CHECK(Ablation::parse(a.to_string()) == a);
  }
  CHECK(Ablation::parse("no_fdm,dual_fdm").dual_fdm);
  CHECK_THROWS_AS(Ablation::parse("no_such_flag"), ConfigError);
  CodecConfig c = CodecConfig::toy(3, 3);
  c.ablation.no_uwvh = true;
  c.Q = 0.5;
  CHECK(CodecConfig::from_record(c.to_record()) == c);
}

TEST_CASE("checkpoints round trip and the hash follows the parameters") {
  const fs::path p = fs::temp_directory_path() / "lfc_test_ckpt.lft";
  CodecConfig cfg = CodecConfig::toy(2, 1);
  cfg.ablation.no_strip_conv = true;
  CodecModel m(cfg, 5);
  m.set_lambda(kLambdaLadder[3]);
  m.save(p);
  const auto back = CodecModel::load(p);
  CHECK(back->config() == cfg);
  CHECK(back->lambda() == kLambdaLadder[3]);
  CHECK(back->hash() == m.hash());
  m.parameters().tensor(0)[0] += 1e-9;
  CHECK(back->hash() != m.hash());
  fs::remove(p);
  CHECK_THROWS_AS(CodecModel::load(p), IoError);
}

TEST_CASE("bitstream container") {
  Bitstream bs;
  bs.header.A = 3;
  bs.header.H = 17;
  bs.header.W = 40;
  bs.header.padded_H = 64;
  bs.header.padded_W = 64;
  bs.header.flags = 5;
  bs.header.Q = 0.75;
  bs.header.model_hash = 0x0123456789ABCDEFull;
  bs.streams = {{1, 2, 3}, {}, std::vector<std::uint8_t>(300, 7)};
  const auto bytes = serialize_bitstream(bs);
  const Bitstream back = parse_bitstream(bytes);
  CHECK(back.header == bs.header);
  CHECK(back.streams == bs.streams);
  CHECK(bitstream_overhead_bytes(bs) + 303 == bytes.size());

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_bitstream(bad), DecodeError);
  bad = bytes;
  bad[4] = 99;
  CHECK_THROWS_AS(parse_bitstream(bad), DecodeError);
  bad = bytes;
  bad.back() ^= 1;
  CHECK_THROWS_AS(parse_bitstream(bad), DecodeError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(parse_bitstream(bad), DecodeError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(parse_bitstream(bad), DecodeError);
  CHECK(crc32(std::vector<std::uint8_t>{'1', '2', '3', '4', '5', '6', '7', '8', '9'}) == 0xCBF43926u);
}

TEST_CASE("light-field tensors") {
  Rng rng(6);
  LightField4D lf = test::random_lf(3, 2, 4, 6, rng);
  const Tensor t = lf_to_tensor(lf);
  CHECK(t.shape() == Shape{1, 3, 8, 12});
  CHECK(tensor_to_lf(t, 2, lf.range()) == lf);
  Tensor wide = test::copy(t);
  wide[0] = 1.7;
  wide[1] = -0.2;
  const LightField4D c = tensor_to_lf(wide, 2, lf.range());
  CHECK(c.in_range());
}

TEST_CASE("encode/decode integrity on toy checkpoints") {
  Rng rng(7);
  for (const Ablation& a : ablation_variants()) {
    CAPTURE(a.to_string());
    CodecConfig cfg = CodecConfig::toy(2, 1);
    cfg.ablation = a;
    const CodecModel m(cfg, 11);
    const LightField4D lf = test::random_lf(1, 2, 32, 32, rng);
    const EncodeResult e1 = encode_lf(lf, m);
    const EncodeResult e2 = encode_lf(lf, m);
    CHECK(e1.bytes == e2.bytes);
    const DecodeResult d = decode_lf(e1.bytes, m);
    CHECK(d.latents == e1.latents);
    CHECK(d.lf.H() == 32);
    CHECK(d.lf.W() == 32);
    CHECK(Ablation::from_bits(d.header.flags) == a);
    CHECK(bpp(e1.bytes, lf) == e1.bpp);
    // same reconstruction as the in-memory forward pass
    const DecodeResult d2 = decode_lf(e1.bytes, m);
    CHECK(d2.lf == d.lf);
    // estimated vs coded length, per stream
    for (const StreamStats& s : e1.streams) {
      const double actual = 8.0 * static_cast<double>(s.bytes);
      CAPTURE(actual);
      CAPTURE(s.estimated_bits);
      CHECK(std::abs(actual - s.estimated_bits) <= 0.03 * s.estimated_bits + 64.0);
    }
  }
}

TEST_CASE("encoder-side and decoder-side Gaussian parameters agree bit for bit") {
  Rng rng(8);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CodecConfig cfg = CodecConfig::toy(2, 1);
    cfg.ablation.hyper_only = seed == 5;
    const CodecModel m(cfg, seed);
    const Tensor hyper = test::random_tensor({1, cfg.M, 4, 4}, rng);
    Tensor y = test::random_tensor({1, cfg.M, 4, 4}, rng, 4.0);
    for (double& v : y.data()) v = static_cast<double>(round_half_away(v));
    const ContextTrace enc = encoder_side_params(m, hyper, y);
    const ContextTrace dec = decoder_side_params(m, hyper, y);
    CHECK(enc.mu == dec.mu);
    CHECK(enc.sigma == dec.sigma);
  }
}

TEST_CASE("decode rejects tampered or mismatched bitstreams") {
  Rng rng(9);
  const CodecModel m(CodecConfig::toy(2, 1), 12);
  const LightField4D lf = test::random_lf(1, 2, 16, 16, rng);
  const auto bytes = encode_lf(lf, m).bytes;
  for (std::size_t pos = 60; pos < bytes.size(); pos += 7) {
    auto bad = bytes;
    bad[pos] ^= 0x40;
    bool detected = false;
    try {
      detected = decode_lf(bad, m).latents != decode_lf(bytes, m).latents;
    } catch (const DecodeError&) {
      detected = true;
    }
    REQUIRE(detected);
  }
  const CodecModel other(CodecConfig::toy(2, 1), 13);
  CHECK_THROWS_AS(decode_lf(bytes, other), DecodeError);
}

TEST_CASE("shape chain with padding for A = 2..5") {
  Rng rng(10);
  for (int A = 2; A <= 5; ++A) {
    const CodecModel m(CodecConfig::toy(A, 1), 14);
    const LightField4D lf = test::random_lf(1, A, 7 + A, 13, rng);
    const EncodeResult e = encode_lf(lf, m);
    const DecodeResult d = decode_lf(e.bytes, m);
    CHECK(d.lf.U() == A);
    CHECK(d.lf.H() == 7 + A);
    CHECK(d.lf.W() == 13);
    CHECK(d.latents == e.latents);
  }
  const CodecModel rgb(CodecConfig::toy(2, 3), 15);
  const LightField4D lf = test::random_lf(3, 2, 8, 8, rng);
  CHECK(decode_lf(encode_lf(lf, rgb).bytes, rgb).lf.channels() == 3);
  CHECK_THROWS_AS(encode_lf(test::random_lf(1, 3, 8, 8, rng), rgb), ShapeError);
}

TEST_CASE("forward pass terms") {
  const CodecModel m(CodecConfig::toy(2, 1), 16);
  Rng rng(16);
  Tape t;
  t.set_grad_enabled(false);
  Tensor x({2, 1, 64, 64});
  for (double& v : x.data()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  const auto f = m.forward(t.constant(std::move(x)), QuantMode::noise, &rng);
  CHECK(f.x_hat.shape() == Shape{2, 1, 64, 64});
  CHECK(f.y_bits.value()[0] > 0.0);
  CHECK(f.z_bits.value()[0] > 0.0);
  for (double p : f.y_likelihood.value().data()) {
    REQUIRE(p >= kLikelihoodBound);
    REQUIRE(p <= 1.0);
  }
}
