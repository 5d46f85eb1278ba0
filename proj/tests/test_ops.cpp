#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "lfc/errors.hpp"
#include "lfc/gradcheck.hpp"
#include "lfc/layers.hpp"
#include "lfc/ops.hpp"
#include "test_util.hpp"

using namespace lfc;

namespace {

Tensor run(const std::function<Var(Tape&)>& f) {
  Tape t;
  t.set_grad_enabled(false);
  return f(t).value();
}

}  // namespace

TEST_CASE("1x1 identity kernel reproduces the input") {
  Rng rng(1);
  const Tensor x = test::random_tensor({2, 1, 5, 4}, rng);
  const Tensor y = run([&](Tape& t) {
    return conv2d(t.constant(test::copy(x)), t.constant(Tensor({1, 1, 1, 1}, 1.0)), Var{}, ConvSpec{});
  });
  CHECK(y == x);
}

TEST_CASE("2x2 all-ones kernel on [[1,2],[3,4]] gives 10") {
  ConvSpec s{.kernel_h = 2, .kernel_w = 2};
  const Tensor y = run([&](Tape& t) {
    return conv2d(t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), t.constant(Tensor({1, 1, 2, 2}, 1.0)), Var{}, s);
  });
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 10.0);
}

TEST_CASE("5x5 stride-5 conv on 160x160 gives 32x32") {
  ConvSpec s{.in_channels = 1, .out_channels = 3, .kernel_h = 5, .kernel_w = 5, .stride_h = 5, .stride_w = 5};
  CHECK(s.out_h(160) == 32);
  const Tensor y = run([&](Tape& t) {
    return conv2d(t.constant(Tensor({1, 1, 160, 160})), t.constant(Tensor(s.weight_shape())), Var{}, s);
  });
  CHECK(y.shape() == Shape{1, 3, 32, 32});
}

TEST_CASE("conv2d matches direct summation on random geometries") {
  Rng rng(2);
  std::uniform_int_distribution<int> k(1, 5), st(1, 3), dl(1, 3), pd(0, 3), ch(1, 3);
  for (int trial = 0; trial < 60; ++trial) {
    ConvSpec s{.in_channels = ch(rng), .out_channels = ch(rng), .kernel_h = k(rng), .kernel_w = k(rng),
               .stride_h = st(rng), .stride_w = st(rng), .dilation_h = dl(rng), .dilation_w = dl(rng),
               .pad_top = pd(rng), .pad_bottom = pd(rng), .pad_left = pd(rng), .pad_right = pd(rng)};
    const int H = 14, W = 13;
    if (s.out_h(H) < 1 || s.out_w(W) < 1) continue;
    const Tensor x = test::random_tensor({2, s.in_channels, H, W}, rng);
    const Tensor w = test::random_tensor(s.weight_shape(), rng);
    const Tensor b = test::random_tensor({s.out_channels}, rng);
    const Tensor y = run([&](Tape& t) {
      return conv2d(t.constant(test::copy(x)), t.constant(test::copy(w)), t.constant(test::copy(b)), s);
    });
    const Tensor ref = test::naive_conv(x, w, &b, s);
    REQUIRE(y.shape() == ref.shape());
    REQUIRE(test::max_abs_diff(y, ref) <= 1e-12);
  }
}

TEST_CASE("transposed conv matches scatter summation") {
  SUBCASE("stride 2, kernel 2, identity weight") {
    DeconvSpec s{.kernel_h = 2, .kernel_w = 2, .stride_h = 2, .stride_w = 2};
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor y = run([&](Tape& t) {
      return conv_transpose2d(t.constant(test::copy(x)), t.constant(Tensor({1, 1, 2, 2}, 1.0)), Var{}, s);
    });
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) CHECK(y.at(0, 0, i, j) == x.at(0, 0, i / 2, j / 2));
  }
  SUBCASE("random k4 s2 p1") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      DeconvSpec s{.in_channels = 3, .out_channels = 2, .kernel_h = 4, .kernel_w = 4, .stride_h = 2, .stride_w = 2,
                   .pad_h = 1, .pad_w = 1};
      const Tensor x = test::random_tensor({1, 3, 5, 6}, rng);
      const Tensor w = test::random_tensor(s.weight_shape(), rng);
      const Tensor b = test::random_tensor({2}, rng);
      const Tensor y = run([&](Tape& t) {
        return conv_transpose2d(t.constant(test::copy(x)), t.constant(test::copy(w)), t.constant(test::copy(b)), s);
      });
      const Tensor ref = test::naive_deconv(x, w, &b, s);
      REQUIRE(y.shape() == Shape{1, 2, 10, 12});
      REQUIRE(test::max_abs_diff(y, ref) <= 1e-12);
    }
  }
}

TEST_CASE("conv backward: bias gradient sums the upstream gradient, zero seed gives zero") {
  Rng rng(4);
  ConvSpec s{.in_channels = 2, .out_channels = 3, .kernel_h = 3, .kernel_w = 3};
  s.same_padding();
  const Tensor x = test::random_tensor({2, 2, 4, 5}, rng);
  const Tensor seed = test::random_tensor({2, 3, 4, 5}, rng);
  Tape t;
  const Var xv = t.leaf(test::copy(x));
  const Var w = t.leaf(test::random_tensor(s.weight_shape(), rng));
  const Var b = t.leaf(Tensor({3}));
  const Var y = conv2d(xv, w, b, s);
  t.backward(y, seed);
  const auto gb = t.grad(b);
  for (int o = 0; o < 3; ++o) {
    double acc = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) acc += seed.at(n, o, i, j);
    CHECK(gb[static_cast<std::size_t>(o)] == doctest::Approx(acc).epsilon(1e-12));
  }

  Tape t2;
  const Var xv2 = t2.leaf(test::copy(x));
  const Var w2 = t2.leaf(test::random_tensor(s.weight_shape(), rng));
  t2.backward(conv2d(xv2, w2, Var{}, s), Tensor({2, 3, 4, 5}));
  for (double g : t2.grad(xv2)) CHECK(g == 0.0);
  for (double g : t2.grad(w2)) CHECK(g == 0.0);
}

TEST_CASE("GELU closed forms") {
  CHECK(math::gelu(0.0) == 0.0);
  CHECK(math::gelu(1.0) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-14));
  CHECK(math::gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  for (double x : {-5.0, -1.3, -0.2, 0.4, 2.2, 7.0}) CHECK(math::gelu(x) - math::gelu(-x) == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("GDN closed forms") {
  SUBCASE("beta = 1, gamma = 0 is the identity, in both directions") {
    Rng rng(5);
    const Tensor x = test::random_tensor({1, 3, 4, 4}, rng);
    for (bool inv : {false, true}) {
      const Tensor y = run([&](Tape& t) {
        return gdn(t.constant(test::copy(x)), t.constant(Tensor({3}, 1.0)), t.constant(Tensor({3, 3})), inv);
      });
      CHECK(y == x);
    }
  }
  SUBCASE("x = 2, beta ~ 0, gamma_self = 1 gives 1") {
    ParameterStore store;
    Gdn g(store, "g", 1, false);
    g.set_effective({kGdnBetaMin}, {1.0});
    const Tensor y = run([&](Tape& t) { return g(t.constant(Tensor({1, 1, 1, 1}, 2.0))); });
    CHECK(y[0] == doctest::Approx(2.0 / std::sqrt(4.0 + kGdnBetaMin)).epsilon(1e-15));
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("GDN then IGDN with gamma = 0 returns the input") {
    Rng rng(6);
    const Tensor x = test::random_tensor({1, 2, 3, 3}, rng);
    const Tensor y = run([&](Tape& t) {
      const Var beta = t.constant(Tensor({2}, 1.0)), gamma = t.constant(Tensor({2, 2}));
      return gdn(gdn(t.constant(test::copy(x)), beta, gamma, false), beta, gamma, true);
    });
    CHECK(y == x);
  }
  SUBCASE("layer init: beta = 1, gamma = 0.1 on the diagonal") {
    ParameterStore store;
    Gdn g(store, "g", 1, false);
    const Tensor y = run([&](Tape& t) { return g(t.constant(Tensor({1, 1, 1, 1}, 3.0))); });
    CHECK(y[0] == doctest::Approx(3.0 / std::sqrt(1.0 + 0.1 * 9.0)).epsilon(1e-12));
  }
}

TEST_CASE("channel attention with zero weights halves the input") {
  Rng rng(7);
  ParameterStore store;
  ChannelAttention att(store, "att", 8, rng);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (double& v : store.tensor(i).data()) v = 0.0;
  const Tensor x = test::random_tensor({1, 8, 3, 3}, rng);
  const Tensor y = run([&](Tape& t) { return att(t.constant(test::copy(x))); });
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 0.5 * x[i]);
}

TEST_CASE("global average of a per-channel constant is that constant") {
  Tensor x({1, 3, 4, 4});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) x.at(0, c, i, j) = 0.25 * (c + 1);
  const Tensor p = run([&](Tape& t) { return global_avg_pool(t.constant(test::copy(x))); });
  for (int c = 0; c < 3; ++c) CHECK(p.at(0, c, 0, 0) == 0.25 * (c + 1));
}

TEST_CASE("concat and nearest upsampling") {
  const Tensor cat = run([&](Tape& t) {
    std::vector<Var> parts;
    for (int i = 0; i < 6; ++i) parts.push_back(t.constant(Tensor({1, 8, 5, 5}, i)));
    return concat(parts);
  });
  CHECK(cat.shape() == Shape{1, 48, 5, 5});
  CHECK(cat.at(0, 47, 4, 4) == 5.0);

  const Tensor up = run([&](Tape& t) { return upsample_nearest(t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2); });
  const double expect[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(up.at(0, 0, i, j) == expect[i][j]);
}

TEST_CASE("ops are deterministic") {
  Rng rng(8);
  ConvSpec s{.in_channels = 3, .out_channels = 4, .kernel_h = 3, .kernel_w = 3};
  s.same_padding();
  const Tensor x = test::random_tensor({2, 3, 9, 9}, rng), w = test::random_tensor(s.weight_shape(), rng);
  auto f = [&] {
    return run([&](Tape& t) { return gelu(conv2d(t.constant(test::copy(x)), t.constant(test::copy(w)), Var{}, s)); });
  };
  CHECK(f() == f());
}

TEST_CASE("backward without a recorded forward is rejected") {
  Tape t;
  const Var a = t.leaf(Tensor({1}, 1.0));
  const Var b = sum(square(a));
  t.backward(b);
  CHECK_THROWS_AS(t.backward(b), StateError);
}

// ---------------------------------------------------------------------------
// Finite-difference checks for every differentiable op over 20 seeds.

namespace {

struct OpCase {
  const char* name;
  Shape shape;
  std::function<Var(Var, Rng&)> op;  // builds the op from input and per-seed constants
  double input_scale = 1.0;
  double input_offset = 0.0;
};

Var cst(Var like, Tensor t) { return like.tape().constant(std::move(t)); }

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  c.push_back({"conv2d", {2, 2, 5, 4}, [](Var x, Rng& r) {
                 ConvSpec s{.in_channels = 2, .out_channels = 3, .kernel_h = 3, .kernel_w = 2, .stride_h = 2,
                            .dilation_w = 2, .pad_top = 1, .pad_bottom = 1, .pad_left = 1, .pad_right = 0};
                 return conv2d(x, cst(x, test::random_tensor(s.weight_shape(), r)),
                               cst(x, test::random_tensor({3}, r)), s);
               }});
  c.push_back({"conv_transpose2d", {1, 2, 3, 3}, [](Var x, Rng& r) {
                 DeconvSpec s{.in_channels = 2, .out_channels = 2, .kernel_h = 4, .kernel_w = 4, .stride_h = 2,
                              .stride_w = 2, .pad_h = 1, .pad_w = 1};
                 return conv_transpose2d(x, cst(x, test::random_tensor(s.weight_shape(), r)),
                                         cst(x, test::random_tensor({2}, r)), s);
               }});
  c.push_back({"add", {1, 2, 3, 3}, [](Var x, Rng& r) { return add(x, cst(x, test::random_tensor(x.shape(), r))); }});
  c.push_back({"sub", {1, 2, 3, 3}, [](Var x, Rng& r) { return sub(cst(x, test::random_tensor(x.shape(), r)), x); }});
  c.push_back({"mul", {1, 2, 3, 3}, [](Var x, Rng& r) { return mul(x, cst(x, test::random_tensor(x.shape(), r))); }});
  c.push_back({"mul_self", {1, 2, 3, 3}, [](Var x, Rng&) { return mul(x, x); }});
  c.push_back({"scale", {1, 2, 3, 3}, [](Var x, Rng&) { return scale(x, -1.7); }});
  c.push_back({"add_scalar", {1, 2, 3, 3}, [](Var x, Rng&) { return square(add_scalar(x, 0.3)); }});
  c.push_back({"square", {1, 2, 3, 3}, [](Var x, Rng&) { return square(x); }});
  c.push_back({"gelu", {1, 2, 3, 3}, [](Var x, Rng&) { return gelu(x); }});
  c.push_back({"relu", {1, 2, 3, 3}, [](Var x, Rng&) { return relu(x); }, 1.0, 0.0});
  c.push_back({"sigmoid", {1, 2, 3, 3}, [](Var x, Rng&) { return sigmoid(x); }, 3.0});
  c.push_back({"softplus", {1, 2, 3, 3}, [](Var x, Rng&) { return softplus(x); }, 3.0});
  for (bool inv : {false, true}) {
    c.push_back({inv ? "igdn" : "gdn", {1, 3, 3, 3}, [inv](Var x, Rng& r) {
                   std::uniform_real_distribution<double> u(0.5, 1.5), g(0.0, 0.3);
                   Tensor beta({3}), gamma({3, 3});
                   for (double& v : beta.data()) v = u(r);
                   for (double& v : gamma.data()) v = g(r);
                   return gdn(x, cst(x, std::move(beta)), cst(x, std::move(gamma)), inv);
                 }});
  }
  c.push_back({"gdn_params", {1, 3, 3, 3}, [](Var x, Rng& r) {
                 // gradient reaches beta and gamma through x-dependent leaves
                 Tape& t = x.tape();
                 const Var beta = add_scalar(square(reshape(slice_channels(global_avg_pool(x), 0, 3), {3})), 0.5);
                 std::uniform_real_distribution<double> g(0.0, 0.3);
                 Tensor gamma({3, 3});
                 for (double& v : gamma.data()) v = g(r);
                 return gdn(x, beta, t.constant(std::move(gamma)), false);
               }});
  c.push_back({"global_avg_pool", {2, 3, 3, 2}, [](Var x, Rng&) { return global_avg_pool(x); }});
  c.push_back({"scale_channels", {2, 3, 3, 3}, [](Var x, Rng&) { return scale_channels(x, sigmoid(global_avg_pool(x))); }});
  c.push_back({"concat", {1, 2, 3, 3}, [](Var x, Rng& r) {
                 const Var parts[] = {x, cst(x, test::random_tensor({1, 1, 3, 3}, r)), square(x)};
                 return concat(parts);
               }});
  c.push_back({"slice_channels", {1, 4, 3, 3}, [](Var x, Rng&) { return slice_channels(x, 1, 3); }});
  c.push_back({"upsample_nearest", {1, 2, 2, 3}, [](Var x, Rng&) { return upsample_nearest(x, 3, 2); }});
  c.push_back({"select_mask", {1, 2, 4, 4}, [](Var x, Rng&) {
                 Tensor m({1, 1, 4, 4});
                 for (int i = 0; i < 4; ++i)
                   for (int j = 0; j < 4; ++j) m.at(0, 0, i, j) = (i + j) % 2;
                 return select_mask(x, m);
               }});
  c.push_back({"reshape", {1, 2, 3, 4}, [](Var x, Rng&) { return square(reshape(x, {1, 6, 2, 2})); }});
  c.push_back({"sum", {1, 2, 3, 3}, [](Var x, Rng&) { return sum(square(x)); }});
  c.push_back({"mean", {1, 2, 3, 3}, [](Var x, Rng&) { return mean(square(x)); }});
  c.push_back({"mse", {1, 2, 3, 3}, [](Var x, Rng& r) { return mse(x, cst(x, test::random_tensor(x.shape(), r))); }});
  c.push_back({"gaussian_likelihood_y", {1, 2, 3, 3}, [](Var x, Rng& r) {
                 return gaussian_likelihood(x, cst(x, test::random_tensor(x.shape(), r)),
                                            cst(x, Tensor(x.shape(), 0.8)), 0.5);
               }, 2.0});
  c.push_back({"gaussian_likelihood_mu_sigma", {1, 2, 3, 3}, [](Var x, Rng& r) {
                 const Var y = cst(x, test::random_tensor(x.shape(), r, 2.0));
                 return gaussian_likelihood(y, x, add_scalar(softplus(x), 0.3), 0.5);
               }});
  c.push_back({"lower_bound", {1, 2, 3, 3}, [](Var x, Rng&) { return lower_bound(x, -10.0); }});
  c.push_back({"neg_log2_sum", {1, 2, 3, 3}, [](Var x, Rng&) { return neg_log2_sum(sigmoid(x)); }});
  return c;
}

}  // namespace

TEST_CASE("every op passes central finite differences at 1e-4 over 20 seeds") {
  for (const OpCase& oc : op_cases()) {
    CAPTURE(oc.name);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      CAPTURE(seed);
      Rng rng(seed);
      Tensor x = test::random_tensor(oc.shape, rng, oc.input_scale);
      if (std::string(oc.name) == "relu") {
        // keep clear of the kink
        for (double& v : x.data())
          if (std::abs(v) < 0.05) v = 0.3;
      }
      const std::uint64_t op_seed = seed * 7919;
      const auto r = check_input_gradient(
          [&](Tape&, Var v) {
            Rng local(op_seed);
            return random_projection(oc.op(v, local), seed);
          },
          x);
      INFO(r.worst);
      REQUIRE(r.passed(1e-4));
    }
  }
}

TEST_CASE("layer parameter gradients pass finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    ParameterStore store;
    ConvSpec s{.in_channels = 2, .out_channels = 2, .kernel_h = 3, .kernel_w = 3};
    Conv2d conv(store, "conv", s.same_padding(), rng);
    Gdn g(store, "gdn", 2, seed % 2 == 0);
    ChannelAttention att(store, "att", 4, rng);
    ConvTranspose2d up(store, "up", DeconvSpec{.in_channels = 2, .out_channels = 4, .kernel_h = 4, .kernel_w = 4,
                                               .stride_h = 2, .stride_w = 2, .pad_h = 1, .pad_w = 1},
                       rng);
    ResBlock res(store, "res", 4, rng);
    const Tensor x = test::random_tensor({1, 2, 4, 4}, rng);
    const auto r = check_parameter_gradient(
        [&](Tape& t) { return random_projection(res(att(up(g(conv(t.constant(test::copy(x))))))), seed); }, store);
    INFO(r.worst);
    REQUIRE(r.passed(1e-4));
  }
}

TEST_CASE("the injected gradient bug is caught") {
  testing::set_gradient_bug(true);
  Rng rng(1);
  ParameterStore store;
  ConvSpec s{.in_channels = 1, .out_channels = 1, .kernel_h = 3, .kernel_w = 3};
  Conv2d conv(store, "conv", s.same_padding(), rng);
  const Tensor x = test::random_tensor({1, 1, 4, 4}, rng);
  const auto r = check_parameter_gradient(
      [&](Tape& t) { return random_projection(conv(t.constant(test::copy(x))), 3); }, store);
  testing::set_gradient_bug(false);
  CHECK_FALSE(r.passed(1e-4));
}

TEST_CASE("gradcheck floor follows the whole gradient, not the sample") {
  // d/dx1 is far below finite-difference resolution next to the x0 term.
  // Sampling only x1 must not shrink the floor to x1's own magnitude.
  const Tensor x({2}, std::vector<double>{0.3, 0.7});
  const Tensor w({2}, std::vector<double>{1e3, 1e-10});
  const InputObjective f = [&](Tape& t, Var v) { return add_scalar(sum(mul(v, t.constant(test::copy(w)))), 4.0); };
  int tiny_only = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = check_input_gradient(f, x, GradCheckOptions{.max_entries = 1, .seed = seed});
    CAPTURE(r.worst);
    CHECK(r.passed(1e-4));
    if (r.worst.find("input[1]") != std::string::npos) ++tiny_only;
  }
  CHECK(tiny_only > 0);
  // a wrong gradient on the dominant entry is still caught
  testing::set_gradient_bug(true);
  Rng rng(2);
  ParameterStore store;
  ConvSpec s{.in_channels = 1, .out_channels = 1, .kernel_h = 3, .kernel_w = 3};
  Conv2d conv(store, "conv", s.same_padding(), rng);
  const Tensor xi = test::random_tensor({1, 1, 4, 4}, rng);
  const auto bad = check_parameter_gradient(
      [&](Tape& t) { return random_projection(conv(t.constant(test::copy(xi))), 3); }, store,
      GradCheckOptions{.max_entries = 3, .seed = 4});
  testing::set_gradient_bug(false);
  CHECK_FALSE(bad.passed(1e-4));
}
