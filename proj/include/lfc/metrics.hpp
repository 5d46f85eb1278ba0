#pragma once

// Distortion, rate and Bjontegaard delta metrics.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lfc/lf_repr.hpp"

namespace lfc {

struct PsnrResult {
  double db = 0.0;  // 0 when lossless
  bool lossless = false;
  double mse = 0.0;
};

// 10 log10(peak^2 / MSE) with the MSE over all samples of all channels.
// With `luma` set, 3-channel fields are first reduced to
// Y = 0.299 R + 0.587 G + 0.114 B.
PsnrResult psnr(std::span<const double> a, std::span<const double> b, double peak);
PsnrResult psnr(const LightField4D& a, const LightField4D& b, double peak, bool luma = false);

// Total file bits / (A^2 H W).
double bits_per_sample(std::size_t file_bytes, int A, int H, int W);
// Same, after checking the file header against the field's extents.
double bpp(std::span<const std::uint8_t> file, const LightField4D& lf);

struct RDPoint {
  double bpp = 0.0;
  double psnr = 0.0;
  bool lossless = false;
};

struct RDRow {
  std::string label;
  RDPoint point;
};

// Cubic least-squares (exact through 4 points) of log10(rate) against PSNR,
// integrated over the overlapping PSNR range. Negative: `a` needs fewer
// bits than `b` for the same quality. Lossless points are dropped and
// reported through `warnings` when given.
double bd_rate(std::span<const RDPoint> a, std::span<const RDPoint> b, std::vector<std::string>* warnings = nullptr);
// Mean PSNR of `a` minus `b` over the overlapping log-rate range.
double bd_psnr(std::span<const RDPoint> a, std::span<const RDPoint> b, std::vector<std::string>* warnings = nullptr);

// Least-squares cubic in the normalized variable t = (x - center) / scale.
struct Cubic {
  double center = 0.0;
  double scale = 1.0;
  std::array<double, 4> c{};
  double operator()(double x) const;
  double integral(double lo, double hi) const;
};
Cubic fit_cubic(std::span<const double> x, std::span<const double> y);

// CSV with header `label,bpp,psnr`.
std::vector<RDRow> read_rd_csv(std::istream& in);
void write_rd_csv(std::ostream& out, const std::vector<RDRow>& rows);
// Points grouped by label, each group sorted by bpp.
std::vector<std::pair<std::string, std::vector<RDPoint>>> group_by_label(const std::vector<RDRow>& rows);

struct BdEntry {
  std::string label;   // test item, e.g. an image name
  std::string anchor;  // compared codec
  double bd_rate = 0.0;  // NaN when the PSNR ranges do not overlap
  double bd_psnr = 0.0;  // NaN when the rate ranges do not overlap
};

// Both BD metrics of `test` against `anchor`. A metric whose integration
// range is empty is NaN and adds a warning; other errors throw.
BdEntry bd_entry(const std::string& label, const std::string& anchor, std::span<const RDPoint> test,
                 std::span<const RDPoint> anchor_points, std::vector<std::string>* warnings);

// Table with one row per label and a "BD-BR(%) / BD-PSNR(dB)" column pair
// per anchor, plus an Average row. NaN cells print as n/a and are left out
// of the average.
void write_bd_table(std::ostream& out, const std::vector<BdEntry>& entries);
void write_bd_csv(std::ostream& out, const std::vector<BdEntry>& entries);

}  // namespace lfc
