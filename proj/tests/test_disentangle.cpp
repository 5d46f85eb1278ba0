#include <doctest.h>

#include <functional>
#include <set>

#include "lfc/disentangle.hpp"
#include "lfc/errors.hpp"
#include "lfc/gradcheck.hpp"
#include "test_util.hpp"

using namespace lfc;

namespace {

Tensor forward(const Extractor& e, const Tensor& x) {
  Tape t;
  t.set_grad_enabled(false);
  return e(t.constant(test::copy(x))).value();
}

// MacPI pixels (row, col) whose value reaches output (i, j) of channel 0.
std::set<std::pair<int, int>> support(const Extractor& e, int rows, int cols, int i, int j) {
  Tape t;
  const Var x = t.leaf(Tensor({1, 1, rows, cols}, 1.0));
  const Var y = e(x);
  Tensor seed(y.shape());
  seed.at(0, 0, i, j) = 1.0;
  t.backward(y, seed);
  std::set<std::pair<int, int>> s;
  const auto g = t.grad(x);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (g[static_cast<std::size_t>(r) * cols + c] != 0.0) s.insert({r, c});
  return s;
}

}  // namespace

TEST_CASE("extractor extents for A in 2..5 and H, W in {16, 32}") {
  for (int A = 2; A <= 5; ++A)
    for (int H : {16, 32})
      for (int W : {16, 32}) {
        const int R = A * H, C = A * W;
        auto ext = [&](ExtractorKind k) { return extractor_extent(ExtractorSpec{k, A, 1, 8}, R, C); };
        CHECK(ext(ExtractorKind::SFE) == std::pair{R, C});
        CHECK(ext(ExtractorKind::AFE) == std::pair{H, W});
        CHECK(ext(ExtractorKind::EFE_A) == std::pair{R, W});
        CHECK(ext(ExtractorKind::EFE_B) == std::pair{H, C});
        CHECK(ext(ExtractorKind::UW_EFE) == std::pair{R, W});
        CHECK(ext(ExtractorKind::VH_EFE) == std::pair{H, C});
        // first UW-EFE layer alone already gives AH x W
        const ConvSpec l0 = extractor_conv(ExtractorSpec{ExtractorKind::UW_EFE, A, 1, 8}, 0);
        CHECK(l0.out_h(R) == R);
        CHECK(l0.out_w(C) == W);
      }
}

TEST_CASE("extractor outputs on a 160x160 MacPI with A = 5") {
  Rng rng(1);
  ParameterStore store;
  const Tensor x = test::random_tensor({1, 1, 160, 160}, rng);
  for (ExtractorKind k : kAllExtractors) {
    const Extractor e(store, extractor_name(k), ExtractorSpec{k, 5, 1, 8}, rng);
    const auto [r, c] = extractor_extent(e.spec(), 160, 160);
    CHECK(forward(e, x).shape() == Shape{1, 8, r, c});
  }
  const ConvSpec l0 = extractor_conv(ExtractorSpec{ExtractorKind::UW_EFE, 5, 1, 8}, 0);
  CHECK(l0.out_h(160) == 160);
  CHECK(l0.out_w(160) == 32);
  CHECK(extractor_extent(ExtractorSpec{ExtractorKind::AFE, 5, 1, 8}, 160, 160) == std::pair{32, 32});
}

TEST_CASE("extractors reject MacPI extents not divisible by A") {
  Rng rng(2);
  ParameterStore store;
  const Extractor e(store, "afe", ExtractorSpec{ExtractorKind::AFE, 3, 1, 4}, rng);
  Tape t;
  CHECK_THROWS_AS(e(t.constant(Tensor({1, 1, 10, 9}))), ShapeError);
}

TEST_CASE("SFE with an identity-center kernel returns its input") {
  Rng rng(3);
  ParameterStore store;
  const Extractor e(store, "sfe", ExtractorSpec{ExtractorKind::SFE, 3, 1, 1}, rng);
  Tensor& w = store.at("sfe.l0.weight");
  for (double& v : w.data()) v = 0.0;
  w.at(0, 0, 1, 1) = 1.0;
  const Tensor x = test::random_tensor({1, 1, 12, 9}, rng);
  CHECK(forward(e, x) == x);
}

TEST_CASE("impulse support stays inside each extractor's subspace") {
  Rng rng(4);
  for (int A = 2; A <= 5; ++A) {
    const int H = 6, W = 6, R = A * H, C = A * W;
    for (ExtractorKind k : kAllExtractors) {
      CAPTURE(A);
      CAPTURE(extractor_name(k));
      ParameterStore store;
      const Extractor e(store, "e", ExtractorSpec{k, A, 1, 1}, rng);
      const auto [orows, ocols] = extractor_extent(e.spec(), R, C);
      const ConvSpec l1 = extractor_layers(k) == 2 ? extractor_conv(e.spec(), 1) : ConvSpec{};
      // every output position, checked against the declared read set
      for (int i = 0; i < orows; ++i)
        for (int j = 0; j < ocols; ++j) {
          std::function<bool(int, int)> allowed;
          switch (k) {
            case ExtractorKind::SFE:  // same angular offset (u, v)
              allowed = [&](int r, int c) { return r % A == i % A && c % A == j % A; };
              break;
            case ExtractorKind::AFE:  // same macro-pixel (h, w)
              allowed = [&](int r, int c) { return r / A == i && c / A == j; };
              break;
            case ExtractorKind::EFE_A:  // same (u, h): one MacPI row
              allowed = [&](int r, int) { return r == i; };
              break;
            case ExtractorKind::EFE_B:  // same (v, w): one MacPI column
              allowed = [&](int, int c) { return c == j; };
              break;
            case ExtractorKind::UW_EFE:  // macro-pixel column w = j, A-row window
              allowed = [&](int r, int c) { return c / A == j && r >= i - l1.pad_top && r < i - l1.pad_top + A; };
              break;
            case ExtractorKind::VH_EFE:  // macro-pixel row h = i, A-column window
              allowed = [&](int r, int c) { return r / A == i && c >= j - l1.pad_left && c < j - l1.pad_left + A; };
              break;
          }
          for (const auto& [r, c] : support(e, R, C, i, j)) REQUIRE(allowed(r, c));
        }
      // an interior output reads its whole declared footprint
      const int ci = orows / 2, cj = ocols / 2;
      const std::size_t n = support(e, R, C, ci, cj).size();
      const std::size_t expect = k == ExtractorKind::SFE ? 9u : static_cast<std::size_t>(A * A);
      CHECK(n == expect);
    }
  }
}

TEST_CASE("UW-EFE and VH-EFE equal a brute-force gather-then-weight oracle") {
  Rng rng(5);
  for (int A = 2; A <= 5; ++A) {
    const int C = 3, F = 4, H = 4, W = 5, R = A * H, Cols = A * W;
    for (ExtractorKind k : {ExtractorKind::UW_EFE, ExtractorKind::VH_EFE}) {
      ParameterStore store;
      const Extractor e(store, "e", ExtractorSpec{k, A, C, F}, rng);
      for (std::size_t p = 0; p < store.size(); ++p) store.tensor(p) = test::random_tensor(store.tensor(p).shape(), rng);
      const Tensor& w0 = store.at("e.l0.weight");
      const Tensor& b0 = store.at("e.l0.bias");
      const Tensor& w1 = store.at("e.l1.weight");
      const Tensor& b1 = store.at("e.l1.bias");
      const int pad = extractor_conv(e.spec(), 1).pad_top + extractor_conv(e.spec(), 1).pad_left;
      LightField4D lf = test::random_lf(C, A, H, W, rng);
      const MacPI m = sai_to_macpi(lf);
      const Tensor x({1, C, R, Cols}, m.pixels());
      const Tensor y = forward(e, x);
      const bool uw = k == ExtractorKind::UW_EFE;
      const int OR = uw ? R : H, OC = uw ? W : Cols;
      REQUIRE(y.shape() == Shape{1, F, OR, OC});
      double worst = 0.0;
      for (int o = 0; o < F; ++o)
        for (int i = 0; i < OR; ++i)
          for (int j = 0; j < OC; ++j) {
            double acc = b1[static_cast<std::size_t>(o)];
            for (int t = 0; t < A; ++t) {
              // layer-1 site feeding tap t of layer 2
              const int li = uw ? i - pad + t : i, lj = uw ? j : j - pad + t;
              if (li < 0 || li >= OR || lj < 0 || lj >= OC) continue;
              for (int f = 0; f < F; ++f) {
                double inner = b0[static_cast<std::size_t>(f)];
                for (int c = 0; c < C; ++c)
                  for (int s = 0; s < A; ++s) {
                    // gather L directly: UW reads (u, v=s, h, w=lj), VH reads (u=s, v, h=li, w)
                    const double sample = uw ? lf.at(c, li % A, s, li / A, lj) : lf.at(c, s, lj % A, li, lj / A);
                    inner += (uw ? w0.at(f, c, 0, s) : w0.at(f, c, s, 0)) * sample;
                  }
                acc += (uw ? w1.at(o, f, t, 0) : w1.at(o, f, 0, t)) * inner;
              }
            }
            worst = std::max(worst, std::abs(acc - y.at(0, o, i, j)));
          }
      CHECK(worst <= 1e-10);
    }
  }
}

TEST_CASE("feature alignment by nearest replication") {
  Rng rng(6);
  Tape t;
  t.set_grad_enabled(false);
  const Tensor afe = test::random_tensor({1, 2, 32, 32}, rng);
  const Tensor up = align_feature(ExtractorKind::AFE, 5, t.constant(test::copy(afe))).value();
  REQUIRE(up.shape() == Shape{1, 2, 160, 160});
  for (int i = 0; i < 160; ++i)
    for (int j = 0; j < 160; ++j) REQUIRE(up.at(0, 1, i, j) == afe.at(0, 1, i / 5, j / 5));

  const Tensor efe = test::random_tensor({1, 1, 160, 32}, rng);
  const Tensor wide = align_feature(ExtractorKind::EFE_A, 5, t.constant(test::copy(efe))).value();
  REQUIRE(wide.shape() == Shape{1, 1, 160, 160});
  for (int i = 0; i < 160; ++i)
    for (int j = 0; j < 160; ++j) REQUIRE(wide.at(0, 0, i, j) == efe.at(0, 0, i, j / 5));

  for (ExtractorKind k : kAllExtractors) {
    const auto [fh, fw] = alignment_factors(k, 3);
    const Tensor c = align_feature(k, 3, t.constant(Tensor({1, 1, 12 / fh, 12 / fw}, 0.7))).value();
    CHECK(c.shape() == Shape{1, 1, 12, 12});
    for (double v : c.data()) CHECK(v == 0.7);
  }
}

TEST_CASE("FDM fuses six 8-channel maps into 48 channels") {
  Rng rng(7);
  for (int A = 2; A <= 5; ++A) {
    ParameterStore store;
    const Fdm fdm(store, "fdm", FdmConfig{A, 1, 8, 48, true, true}, rng);
    Tape t;
    t.set_grad_enabled(false);
    const auto b = fdm.forward(t.constant(test::random_tensor({2, 1, 4 * A, 3 * A}, rng)));
    CHECK(b.kinds.size() == 6);
    CHECK(b.concat.shape() == Shape{2, 48, 4 * A, 3 * A});
    CHECK(b.fused.shape() == Shape{2, 48, 4 * A, 3 * A});
  }
  CHECK(Fdm::concat_order(true) == std::vector<ExtractorKind>{ExtractorKind::SFE, ExtractorKind::AFE,
                                                              ExtractorKind::EFE_A, ExtractorKind::UW_EFE,
                                                              ExtractorKind::EFE_B, ExtractorKind::VH_EFE});
}

TEST_CASE("FDM without UW/VH-EFE concatenates four maps") {
  Rng rng(8);
  ParameterStore store;
  const Fdm fdm(store, "fdm", FdmConfig{2, 1, 8, 48, false, true}, rng);
  Tape t;
  t.set_grad_enabled(false);
  const auto b = fdm.forward(t.constant(test::random_tensor({1, 1, 8, 8}, rng)));
  CHECK(b.kinds.size() == 4);
  CHECK(b.concat.dim(1) == 32);
  CHECK(b.fused.dim(1) == 48);
  CHECK_FALSE(store.contains("fdm.uw_efe.l0.weight"));
}

TEST_CASE("FDM with zeroed attention is fuse(concat / 2) + skip(x)") {
  Rng rng(9);
  ParameterStore store;
  const Fdm fdm(store, "fdm", FdmConfig{3, 1, 8, 16, true, true}, rng);
  for (std::size_t p = 0; p < store.size(); ++p)
    if (store.name(p).rfind("fdm.attention", 0) == 0)
      for (double& v : store.tensor(p).data()) v = 0.0;
  for (const char* n : {"fdm.fuse.bias", "fdm.skip.bias"}) store.at(n) = test::random_tensor({16}, rng);
  const Tensor x = test::random_tensor({1, 1, 9, 12}, rng);
  Tape t;
  t.set_grad_enabled(false);
  const auto b = fdm.forward(t.constant(test::copy(x)));
  Tensor half = test::copy(b.concat.value());
  for (double& v : half.data()) v *= 0.5;
  const ConvSpec fuse{.in_channels = 48, .out_channels = 16}, skip{.in_channels = 1, .out_channels = 16};
  const Tensor a = test::naive_conv(half, store.at("fdm.fuse.weight"), &store.at("fdm.fuse.bias"), fuse);
  const Tensor s = test::naive_conv(x, store.at("fdm.skip.weight"), &store.at("fdm.skip.bias"), skip);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] + s[i] - b.fused.value()[i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("disabled FDM is a single 3x3 conv") {
  Rng rng(10);
  ParameterStore store;
  const Fdm fdm(store, "fdm", FdmConfig{2, 1, 8, 12, true, false}, rng);
  CHECK(store.size() == 2);
  const Tensor x = test::random_tensor({1, 1, 8, 8}, rng);
  Tape t;
  t.set_grad_enabled(false);
  const Tensor y = fdm(t.constant(test::copy(x))).value();
  ConvSpec c{.in_channels = 1, .out_channels = 12, .kernel_h = 3, .kernel_w = 3};
  c.same_padding();
  CHECK(test::max_abs_diff(y, test::naive_conv(x, store.at("fdm.plain.weight"), &store.at("fdm.plain.bias"), c)) <=
        1e-12);
}

TEST_CASE("FDM gradients pass finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    ParameterStore store;
    const Fdm fdm(store, "fdm", FdmConfig{2, 1, 2, 4, seed % 2 == 1, true}, rng);
    const Tensor x = test::random_tensor({1, 1, 4, 6}, rng);
    const auto ri = check_input_gradient([&](Tape&, Var v) { return random_projection(fdm(v), seed); }, x);
    INFO(ri.worst);
    REQUIRE(ri.passed(1e-4));
    const auto rp = check_parameter_gradient(
        [&](Tape& t) { return random_projection(fdm(t.constant(test::copy(x))), seed); }, store);
    INFO(rp.worst);
    REQUIRE(rp.passed(1e-4));
  }
}
