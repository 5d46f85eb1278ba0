#include <doctest.h>

#include "lfc/errors.hpp"
#include "lfc/gradcheck.hpp"
#include "lfc/train.hpp"
#include "test_util.hpp"

using namespace lfc;

TEST_CASE("rd loss combines distortion and rate") {
  Tape t;
  const Var x = t.constant(Tensor({1, 1, 2, 2}, {0.0, 0.0, 0.0, 0.0}));
  const Var xh = t.constant(Tensor({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0}));
  const Var bits = t.constant(Tensor({1}, 400.0));
  const RdTerms r = rd_loss(x, xh, bits, 0.01, 100.0);
  CHECK(r.D.value()[0] == doctest::Approx(0.5));
  CHECK(r.R.value()[0] == doctest::Approx(4.0));
  CHECK(r.J.value()[0] == doctest::Approx(0.54));
  CHECK(rd_loss(x, x, bits, 0.0, 100.0).J.value()[0] == 0.0);
  CHECK_THROWS_AS(rd_loss(x, xh, bits, -1.0, 100.0), ParameterError);
  CHECK_THROWS_AS(rd_loss(x, xh, bits, 0.1, 0.0), ParameterError);
}

TEST_CASE("adam matches a hand-computed trace") {
  ParameterStore store;
  Tensor& p = store.create("p", Tensor({2}, {1.0, -2.0}));
  Adam adam(store, 1e-3);
  SUBCASE("first step moves every parameter by lr against the gradient sign") {
    p.grad()[0] = 0.3;
    p.grad()[1] = -7.0;
    adam.step();
    CHECK(p[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-9));
  }
  SUBCASE("five steps with varying gradients") {
    const double gs[] = {0.5, -0.1, 0.2, 0.2, -0.4};
    double m = 0, v = 0, x = 1.0;
    for (int k = 1; k <= 5; ++k) {
      const double g = gs[k - 1];
      p.zero_grad();
      p.grad()[0] = g;
      adam.step();
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      x -= 1e-3 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
      CHECK(p[0] == doctest::Approx(x).epsilon(1e-12));
    }
    CHECK(p[1] == -2.0);
    CHECK(adam.steps() == 5);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    p.zero_grad();
    adam.step();
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
  }
  SUBCASE("non-finite gradient is rejected without an update") {
    p.grad()[0] = std::nan("");
    CHECK_THROWS_AS(adam.step(), NumericError);
    CHECK(p[0] == 1.0);
  }
}

TEST_CASE("gradient clipping") {
  ParameterStore store;
  Tensor& p = store.create("p", Tensor({2}));
  p.grad()[0] = 3.0;
  p.grad()[1] = 4.0;
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(p.grad()[0] == doctest::Approx(0.6));
  CHECK(p.grad()[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(store, 10.0) == doctest::Approx(1.0));
  CHECK(p.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("plateau schedule") {
  PlateauSchedule s(1e-4, 0.5, 2);
  CHECK(s.update(1.0) == 1e-4);
  CHECK(s.update(1.0) == 1e-4);
  CHECK(s.update(1.0) == doctest::Approx(5e-5));
  CHECK(s.update(0.5) == doctest::Approx(5e-5));
  CHECK(s.update(0.6) == doctest::Approx(5e-5));
  CHECK(s.update(0.5) == doctest::Approx(2.5e-5));
  PlateauSchedule floor(4e-6, 0.5, 1, 1e-6);
  floor.update(1.0);
  for (int i = 0; i < 10; ++i) floor.update(2.0);
  CHECK(floor.lr() == 1e-6);
  CHECK_THROWS_AS(PlateauSchedule(1e-4, 1.5), ParameterError);
}

TEST_CASE("synthetic light fields follow the disparity model") {
  const LightField4D flat = synth_lf(3, 12, 14, 0.0, 1);
  for (int u = 0; u < 3; ++u)
    for (int v = 0; v < 3; ++v)
      for (int h = 0; h < 12; ++h)
        for (int w = 0; w < 14; ++w) REQUIRE(flat.at(0, u, v, h, w) == flat.at(0, 0, 0, h, w));

  const LightField4D one = synth_lf(3, 12, 14, 1.0, 2);
  for (int u = 0; u + 1 < 3; ++u)
    for (int v = 0; v + 1 < 3; ++v)
      for (int h = 0; h + 1 < 12; ++h)
        for (int w = 0; w + 1 < 14; ++w) {
          REQUIRE(one.at(0, u + 1, v, h, w) == one.at(0, u, v, h + 1, w));
          REQUIRE(one.at(0, u, v + 1, h, w) == one.at(0, u, v, h, w + 1));
        }

  // half-pixel disparity: the EPI slope shows up as a one-row shift between u = 0 and u = 2
  const LightField4D half = synth_lf(3, 20, 20, 0.5, 3);
  int best = 99;
  double best_ssd = 1e300;
  for (int s = -3; s <= 3; ++s) {
    double ssd = 0;
    for (int h = 3; h < 17; ++h)
      for (int w = 0; w < 20; ++w) {
        const double d = half.at(0, 2, 0, h, w) - half.at(0, 0, 0, h + s, w);
        ssd += d * d;
      }
    if (ssd < best_ssd) best_ssd = ssd, best = s;
  }
  CHECK(best == 1);
  CHECK(best_ssd == 0.0);

  for (const auto& lf : synth_dataset(4, 2, 8, 8, 4, 3)) {
    CHECK(lf.channels() == 3);
    CHECK(lf.in_range());
  }
  CHECK(synth_dataset(3, 2, 8, 8, 5)[2] == synth_dataset(3, 2, 8, 8, 5)[2]);
}

TEST_CASE("rd objective gradient end to end") {
  const CodecModel m(CodecConfig::toy(2, 1), 21);
  const LightField4D lf = synth_lf(2, 32, 32, 0.7, 22);
  const Tensor x = lf_to_tensor(lf);
  GradCheckOptions opt;
  opt.max_entries = 50;
  opt.seed = 23;
  const auto r = check_parameter_gradient(
      [&](Tape& t) {
        const Var xv = t.constant(test::copy(x));
        const auto f = m.forward(xv, QuantMode::none, nullptr);
        return rd_loss(xv, f.x_hat, add(f.y_bits, f.z_bits), kLambdaLadder[2], 4096.0).J;
      },
      const_cast<ParameterStore&>(m.parameters()), opt);
  INFO(r.worst);
  CHECK(r.checked == 50);
  CHECK(r.passed(1e-3));
}

TEST_CASE("toy training lowers the objective and is reproducible") {
  const auto data = synth_dataset(8, 2, 32, 32, 31);
  TrainOptions o;
  o.steps = 200;
  o.batch = 2;
  o.lr = 1e-3;
  o.lambda = kLambdaLadder[2];
  o.seed = 32;
  CodecModel a(CodecConfig::toy(2, 1), 33);
  const TrainResult ra = train_toy(a, data, o);
  CHECK_FALSE(ra.diverged);
  CHECK(ra.trace.size() == 200);
  INFO(ra.initial_J, " -> ", ra.final_J);
  CHECK(ra.final_J < 0.7 * ra.initial_J);

  o.steps = 5;
  CodecModel b(CodecConfig::toy(2, 1), 33), c(CodecConfig::toy(2, 1), 33);
  const TrainResult rb = train_toy(b, data, o), rc = train_toy(c, data, o);
  for (std::size_t i = 0; i < rb.trace.size(); ++i) CHECK(rb.trace[i].J == rc.trace[i].J);
  CHECK(b.hash() == c.hash());
  CHECK_THROWS_AS(train_toy(b, {}, o), ParameterError);
  CHECK_THROWS_AS(train_toy(b, synth_dataset(1, 3, 8, 8, 1), o), ShapeError);
}
