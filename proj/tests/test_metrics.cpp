#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lfc/errors.hpp"
#include "lfc/metrics.hpp"
#include "test_util.hpp"

using namespace lfc;

namespace {

std::vector<RDPoint> curve(double rate_scale, double psnr_shift) {
  const double bpp[] = {0.1, 0.2, 0.4, 0.8, 1.6};
  const double db[] = {28.0, 31.0, 33.5, 35.5, 37.0};
  std::vector<RDPoint> c;
  for (int i = 0; i < 5; ++i) c.push_back({bpp[i] * rate_scale, db[i] + psnr_shift, false});
  return c;
}

}  // namespace

TEST_CASE("psnr") {
  const std::vector<double> a{0, 0, 0, 0}, b{1, -1, 1, -1};
  CHECK(psnr(a, b, 255.0).db == doctest::Approx(48.1308036).epsilon(1e-9));
  CHECK(psnr(a, std::vector<double>{2, 2, 2, 2}, 2.0).db == doctest::Approx(0.0));
  const PsnrResult same = psnr(b, b, 1.0);
  CHECK(same.lossless);
  CHECK(same.mse == 0.0);
  CHECK_THROWS_AS(psnr(a, std::vector<double>{1}, 1.0), ShapeError);
  CHECK_THROWS_AS(psnr(a, b, 0.0), ParameterError);

  // invariant to a common permutation of both inputs
  Rng rng(1);
  const LightField4D x = test::random_lf(1, 3, 5, 6, rng), y = test::random_lf(1, 3, 5, 6, rng);
  std::vector<std::size_t> perm(x.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> px, py;
  for (std::size_t i : perm) px.push_back(x.samples()[i]), py.push_back(y.samples()[i]);
  CHECK(psnr(px, py, 1.0).db == doctest::Approx(psnr(x, y, 1.0).db).epsilon(1e-12));

  // luma of equal RGB planes is that plane
  LightField4D rgb(3, 2, 2, 2, 2), rgb2(3, 2, 2, 2, 2);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb.samples()[i] = 0.5, rgb2.samples()[i] = 0.25;
  CHECK(psnr(rgb, rgb2, 1.0, true).mse == doctest::Approx(0.0625));
  CHECK_THROWS_AS(psnr(x, y, 1.0, true), ParameterError);
}

TEST_CASE("bits per sample") {
  CHECK(bits_per_sample(10, 2, 8, 8) == 0.3125);
  CHECK(bits_per_sample(20, 2, 8, 4) == 2 * bits_per_sample(10, 2, 8, 4));
  CHECK(bits_per_sample(1000, 5, 10, 10) == 3.2);
  CHECK_THROWS_AS(bits_per_sample(1, 0, 1, 1), ParameterError);
}

TEST_CASE("cubic fit") {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 9, 28, 65, 126};  // x^3 + 1
  const Cubic c = fit_cubic(x, y);
  CHECK(c(2.5) == doctest::Approx(2.5 * 2.5 * 2.5 + 1).epsilon(1e-10));
  CHECK(c.integral(0.0, 2.0) == doctest::Approx(4.0 + 2.0).epsilon(1e-10));
  CHECK_THROWS_AS(fit_cubic(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), MetricError);
}

TEST_CASE("Bjontegaard deltas") {
  const auto a = curve(1.0, 0.0);
  CHECK(bd_rate(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(bd_psnr(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  // half the rate everywhere is -50 %
  CHECK(bd_rate(curve(0.5, 0.0), a) == doctest::Approx(-50.0).epsilon(1e-9));
  CHECK(bd_rate(curve(2.0, 0.0), a) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(bd_psnr(curve(1.0, 0.7), a) == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(bd_psnr(curve(1.0, -0.7), a) == doctest::Approx(-0.7).epsilon(1e-9));

  auto shuffled = curve(0.5, 0.0);
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[1], shuffled[3]);
  CHECK(bd_rate(shuffled, a) == doctest::Approx(bd_rate(curve(0.5, 0.0), a)).epsilon(1e-12));

  auto with_lossless = curve(0.5, 0.0);
  with_lossless.push_back({3.0, 0.0, true});
  std::vector<std::string> warnings;
  CHECK(bd_rate(with_lossless, a, &warnings) == doctest::Approx(-50.0).epsilon(1e-9));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("lossless") != std::string::npos);

  CHECK_THROWS_AS(bd_rate(std::vector<RDPoint>(a.begin(), a.begin() + 3), a), MetricError);
  CHECK_THROWS_AS(bd_psnr(curve(100.0, 0.0), a), MetricError);
  CHECK_THROWS_AS(bd_rate(curve(1.0, 20.0), a), MetricError);
}

TEST_CASE("RD csv round trip and grouping") {
  std::vector<RDRow> rows;
  for (const auto& p : curve(1.0, 0.0)) rows.push_back({"img/a", p});
  rows.push_back({"img/b", {0.123456789012345, 30.0000000001, false}});
  rows.push_back({"img/b", {4.0, 0.0, true}});
  std::stringstream s;
  write_rd_csv(s, rows);
  const auto back = read_rd_csv(s);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].label == rows[i].label);
    CHECK(back[i].point.bpp == rows[i].point.bpp);
    CHECK(back[i].point.psnr == rows[i].point.psnr);
    CHECK(back[i].point.lossless == rows[i].point.lossless);
  }
  const auto groups = group_by_label(back);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].second.size() == 5);
  CHECK(groups[1].second.front().bpp < groups[1].second.back().bpp);

  std::istringstream bad_header("name,bpp,psnr\n");
  CHECK_THROWS_AS(read_rd_csv(bad_header), FormatError);
  std::istringstream bad_number("label,bpp,psnr\na,0.1x,30\n");
  CHECK_THROWS_AS(read_rd_csv(bad_number), FormatError);
  std::istringstream bad_fields("label,bpp,psnr\na,0.1\n");
  CHECK_THROWS_AS(read_rd_csv(bad_fields), FormatError);
}

TEST_CASE("BD table layout") {
  const std::vector<BdEntry> e{{"Bikes", "JPEG", -10.0, 0.5}, {"Bikes", "HEVC", 5.0, -0.2},
                               {"Fountain", "JPEG", -20.0, 1.5}};
  std::ostringstream t;
  write_bd_table(t, e);
  const std::string s = t.str();
  CHECK(s.find("Pro. vs. JPEG") != std::string::npos);
  CHECK(s.find("Pro. vs. HEVC") != std::string::npos);
  CHECK(s.find("BD-BR(%)  BD-PSNR(dB)") != std::string::npos);
  CHECK(s.find("Average") != std::string::npos);
  CHECK(s.find("-15.00") != std::string::npos);
  std::ostringstream c;
  write_bd_csv(c, e);
  CHECK(c.str().find("Bikes") != std::string::npos);
}

TEST_CASE("BD entry with disjoint rate ranges") {
  // Same PSNRs at 1.5x the rate: BD-BR is defined, the rate ranges are disjoint.
  const std::vector<RDPoint> test{{0.40, 20.0}, {0.42, 20.5}, {0.44, 21.0}, {0.46, 21.5}};
  std::vector<RDPoint> anchor = test;
  for (auto& p : anchor) p.bpp *= 1.5;
  std::vector<std::string> warnings;
  const BdEntry e = bd_entry("img", "wide", test, anchor, &warnings);
  CHECK(e.bd_rate == doctest::Approx(100.0 / 1.5 - 100.0).epsilon(1e-9));
  CHECK(std::isnan(e.bd_psnr));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("BD-PSNR") != std::string::npos);

  std::ostringstream t, c;
  write_bd_table(t, {e, {"other", "wide", -10.0, 0.5}});
  CHECK(t.str().find("n/a") != std::string::npos);
  CHECK(t.str().find("-21.67") != std::string::npos);
  CHECK(t.str().find("0.500") != std::string::npos);
  write_bd_csv(c, {e});
  CHECK(c.str().find(",n/a\n") != std::string::npos);

  // too few points is still an error
  CHECK_THROWS_AS(bd_entry("img", "wide", std::span(test).first(3), anchor, nullptr), MetricError);
}
