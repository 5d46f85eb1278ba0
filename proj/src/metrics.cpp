#include "lfc/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "lfc/bitstream.hpp"
#include "lfc/errors.hpp"

namespace lfc {

PsnrResult psnr(std::span<const double> a, std::span<const double> b, double peak) {
  if (a.size() != b.size()) throw ShapeError("psnr: inputs differ in size");
  if (a.empty()) throw ShapeError("psnr: empty input");
  if (!(peak > 0.0)) throw ParameterError("psnr: peak must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  PsnrResult r;
  r.mse = s / static_cast<double>(a.size());
  if (r.mse == 0.0) {
    r.lossless = true;
    return r;
  }
  r.db = 10.0 * std::log10(peak * peak / r.mse);
  return r;
}

namespace {

std::vector<double> luma(const LightField4D& lf) {
  const std::size_t plane = lf.size() / 3;
  const auto& s = lf.samples();
  std::vector<double> y(plane);
  for (std::size_t i = 0; i < plane; ++i) y[i] = 0.299 * s[i] + 0.587 * s[plane + i] + 0.114 * s[2 * plane + i];
  return y;
}

}  // namespace

PsnrResult psnr(const LightField4D& a, const LightField4D& b, double peak, bool use_luma) {
  if (a.channels() != b.channels() || a.U() != b.U() || a.V() != b.V() || a.H() != b.H() || a.W() != b.W()) {
    throw ShapeError("psnr: light fields differ in extent");
  }
  if (use_luma) {
    if (a.channels() != 3) throw ParameterError("psnr: luma needs 3 channels");
    const auto ya = luma(a), yb = luma(b);
    return psnr(ya, yb, peak);
  }
  return psnr(a.samples(), b.samples(), peak);
}

double bits_per_sample(std::size_t file_bytes, int A, int H, int W) {
  if (A < 1 || H < 1 || W < 1) throw ParameterError("bpp: extents must be positive");
  return 8.0 * static_cast<double>(file_bytes) / (static_cast<double>(A) * A * H * W);
}

double bpp(std::span<const std::uint8_t> file, const LightField4D& lf) {
  const Bitstream bs = parse_bitstream(file);
  const auto& h = bs.header;
  if (h.A != lf.U() || h.A != lf.V() || h.H != lf.H() || h.W != lf.W()) {
    throw ShapeError("bpp: bitstream header does not match the light field extents");
  }
  return bits_per_sample(file.size(), h.A, h.H, h.W);
}

// ---------------------------------------------------------------------------
// Bjontegaard

double Cubic::operator()(double x) const {
  const double t = (x - center) / scale;
  return c[0] + t * (c[1] + t * (c[2] + t * c[3]));
}

double Cubic::integral(double lo, double hi) const {
  auto prim = [this](double x) {
    const double t = (x - center) / scale;
    return scale * t * (c[0] + t * (c[1] / 2 + t * (c[2] / 3 + t * c[3] / 4)));
  };
  return prim(hi) - prim(lo);
}

Cubic fit_cubic(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 4) throw MetricError("cubic fit needs at least 4 points");
  const auto n = static_cast<Eigen::Index>(x.size());
  Cubic p;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  p.center = 0.5 * (*lo + *hi);
  p.scale = 0.5 * (*hi - *lo);
  if (!(p.scale > 0.0)) throw MetricError("cubic fit: all abscissae equal");
  Eigen::MatrixXd V(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = (x[i] - p.center) / p.scale;
    V(i, 0) = 1.0;
    V(i, 1) = t;
    V(i, 2) = t * t;
    V(i, 3) = t * t * t;
    b(i) = y[i];
  }
  const Eigen::VectorXd c = V.colPivHouseholderQr().solve(b);
  for (int k = 0; k < 4; ++k) p.c[k] = c(k);
  return p;
}

namespace {

constexpr const char* kNoOverlap = "BD metric: curves do not overlap";

struct Prepared {
  std::vector<double> log_rate;
  std::vector<double> psnr;
};

Prepared prepare(std::span<const RDPoint> pts, const char* name, std::vector<std::string>* warnings) {
  std::vector<RDPoint> kept;
  for (const auto& p : pts) {
    if (p.lossless) {
      if (warnings) warnings->push_back(std::string(name) + ": lossless point excluded from fit");
      continue;
    }
    if (!(p.bpp > 0.0) || !std::isfinite(p.psnr)) throw MetricError(std::string(name) + ": invalid RD point");
    kept.push_back(p);
  }
  if (kept.size() < 4) throw MetricError(std::string(name) + ": BD metrics need at least 4 lossy points");
  std::sort(kept.begin(), kept.end(), [](const RDPoint& a, const RDPoint& b) {
    return a.bpp < b.bpp || (a.bpp == b.bpp && a.psnr < b.psnr);
  });
  Prepared out;
  for (const auto& p : kept) {
    out.log_rate.push_back(std::log10(p.bpp));
    out.psnr.push_back(p.psnr);
  }
  return out;
}

double mean_difference(std::span<const double> xa, std::span<const double> ya, std::span<const double> xb,
                       std::span<const double> yb) {
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xb.begin(), xb.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xb.begin(), xb.end()));
  if (!(hi > lo)) throw MetricError(kNoOverlap);
  const Cubic fa = fit_cubic(xa, ya), fb = fit_cubic(xb, yb);
  return (fa.integral(lo, hi) - fb.integral(lo, hi)) / (hi - lo);
}

}  // namespace

double bd_rate(std::span<const RDPoint> a, std::span<const RDPoint> b, std::vector<std::string>* warnings) {
  const Prepared pa = prepare(a, "first curve", warnings), pb = prepare(b, "second curve", warnings);
  const double d = mean_difference(pa.psnr, pa.log_rate, pb.psnr, pb.log_rate);
  return (std::pow(10.0, d) - 1.0) * 100.0;
}

double bd_psnr(std::span<const RDPoint> a, std::span<const RDPoint> b, std::vector<std::string>* warnings) {
  const Prepared pa = prepare(a, "first curve", warnings), pb = prepare(b, "second curve", warnings);
  return mean_difference(pa.log_rate, pa.psnr, pb.log_rate, pb.psnr);
}

BdEntry bd_entry(const std::string& label, const std::string& anchor, std::span<const RDPoint> test,
                 std::span<const RDPoint> anchor_points, std::vector<std::string>* warnings) {
  const auto guarded = [&](auto metric, const char* what) {
    try {
      return metric(test, anchor_points, warnings);
    } catch (const MetricError& e) {
      if (std::string(e.what()) != kNoOverlap) throw;
      if (warnings) warnings->push_back(std::string(what) + " undefined: curves do not overlap");
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  return {label, anchor, guarded(bd_rate, "BD-BR"), guarded(bd_psnr, "BD-PSNR")};
}

// ---------------------------------------------------------------------------
// CSV and tables

std::vector<RDRow> read_rd_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("RD csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "label,bpp,psnr") throw FormatError("RD csv: expected header 'label,bpp,psnr'");
  std::vector<RDRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      throw FormatError("RD csv: line " + std::to_string(lineno) + " must have 3 fields");
    }
    RDRow r;
    r.label = line.substr(0, c1);
    try {
      std::size_t used = 0;
      const std::string b = line.substr(c1 + 1, c2 - c1 - 1), p = line.substr(c2 + 1);
      r.point.bpp = std::stod(b, &used);
      if (used != b.size()) throw std::invalid_argument("bpp");
      if (p == "lossless") {
        r.point.lossless = true;
      } else {
        r.point.psnr = std::stod(p, &used);
        if (used != p.size()) throw std::invalid_argument("psnr");
      }
    } catch (const std::exception&) {
      throw FormatError("RD csv: line " + std::to_string(lineno) + " has a malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_rd_csv(std::ostream& out, const std::vector<RDRow>& rows) {
  out << "label,bpp,psnr\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.label << ',' << r.point.bpp << ',';
    if (r.point.lossless)
      out << "lossless";
    else
      out << r.point.psnr;
    out << '\n';
  }
}

std::vector<std::pair<std::string, std::vector<RDPoint>>> group_by_label(const std::vector<RDRow>& rows) {
  std::vector<std::pair<std::string, std::vector<RDPoint>>> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& g) { return g.first == r.label; });
    if (it == out.end()) {
      out.emplace_back(r.label, std::vector<RDPoint>{});
      it = out.end() - 1;
    }
    it->second.push_back(r.point);
  }
  for (auto& g : out)
    std::sort(g.second.begin(), g.second.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
  return out;
}

void write_bd_table(std::ostream& out, const std::vector<BdEntry>& entries) {
  std::vector<std::string> labels, anchors;
  for (const auto& e : entries) {
    if (std::find(labels.begin(), labels.end(), e.label) == labels.end()) labels.push_back(e.label);
    if (std::find(anchors.begin(), anchors.end(), e.anchor) == anchors.end()) anchors.push_back(e.anchor);
  }
  std::map<std::pair<std::string, std::string>, const BdEntry*> cell;
  for (const auto& e : entries) cell[{e.label, e.anchor}] = &e;

  std::size_t lw = 7;
  for (const auto& l : labels) lw = std::max(lw, l.size());
  const int cw = 22;
  out << std::left << std::setw(static_cast<int>(lw)) << "Image";
  for (const auto& a : anchors) out << " | " << std::setw(cw) << ("Pro. vs. " + a);
  out << '\n' << std::setw(static_cast<int>(lw)) << "";
  for (std::size_t i = 0; i < anchors.size(); ++i) out << " | " << std::setw(cw) << "BD-BR(%)  BD-PSNR(dB)";
  out << '\n';
  auto row = [&](const std::string& name, auto value) {
    out << std::left << std::setw(static_cast<int>(lw)) << name;
    for (const auto& a : anchors) {
      std::ostringstream c;
      const auto v = value(a);
      const auto num = [&](double x, int width, int prec) {
        c << std::right << std::setw(width);
        if (std::isnan(x))
          c << "n/a";
        else
          c << std::fixed << std::setprecision(prec) << x;
      };
      if (v.first) {
        num(v.second.first, 8, 2);
        c << "  ";
        num(v.second.second, 11, 3);
      } else {
        c << "       -            -";
      }
      out << " | " << std::left << std::setw(cw) << c.str();
    }
    out << '\n';
  };
  for (const auto& l : labels) {
    row(l, [&](const std::string& a) {
      const auto it = cell.find({l, a});
      return it == cell.end() ? std::pair{false, std::pair{0.0, 0.0}}
                              : std::pair{true, std::pair{it->second->bd_rate, it->second->bd_psnr}};
    });
  }
  row("Average", [&](const std::string& a) {
    double r = 0, p = 0;
    int n = 0, nr = 0, np = 0;
    for (const auto& e : entries)
      if (e.anchor == a) {
        ++n;
        if (!std::isnan(e.bd_rate)) r += e.bd_rate, ++nr;
        if (!std::isnan(e.bd_psnr)) p += e.bd_psnr, ++np;
      }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return n ? std::pair{true, std::pair{nr ? r / nr : nan, np ? p / np : nan}} : std::pair{false, std::pair{0.0, 0.0}};
  });
}

void write_bd_csv(std::ostream& out, const std::vector<BdEntry>& entries) {
  out << "label,anchor,bd_rate_percent,bd_psnr_db\n" << std::setprecision(10);
  const auto num = [](double x) {
    std::ostringstream s;
    s << std::setprecision(10);
    if (std::isnan(x))
      s << "n/a";
    else
      s << x;
    return s.str();
  };
  for (const auto& e : entries) out << e.label << ',' << e.anchor << ',' << num(e.bd_rate) << ',' << num(e.bd_psnr) << '\n';
}

}  // namespace lfc
