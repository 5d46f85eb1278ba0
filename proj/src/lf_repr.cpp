#include "lfc/lf_repr.hpp"

#include <algorithm>
#include <string>

#include "lfc/errors.hpp"

namespace lfc {

namespace {

void require_positive(int value, const char* what) {
  if (value < 1) throw ShapeError(std::string(what) + " must be >= 1, got " + std::to_string(value));
}

}  // namespace

LightField4D::LightField4D(int channels, int U, int V, int H, int W, ValueRange range)
    : channels_(channels), U_(U), V_(V), H_(H), W_(W), range_(range) {
  require_positive(channels, "channels");
  require_positive(U, "U");
  require_positive(V, "V");
  require_positive(H, "H");
  require_positive(W, "W");
  samples_.assign(static_cast<std::size_t>(channels) * U * V * H * W, range.lo);
}

bool LightField4D::in_range() const {
  return std::all_of(samples_.begin(), samples_.end(),
                     [&](double s) { return s >= range_.lo && s <= range_.hi; });
}

MacPI::MacPI(int channels, int A, int H, int W, ValueRange range)
    : channels_(channels), A_(A), H_(H), W_(W), range_(range) {
  require_positive(channels, "channels");
  require_positive(A, "A");
  require_positive(H, "H");
  require_positive(W, "W");
  pixels_.assign(static_cast<std::size_t>(channels) * A * H * A * W, range.lo);
}

MacPI make_macpi(int channels, int A, int rows, int cols, std::vector<double> pixels,
                 ValueRange range) {
  require_positive(A, "A");
  if (rows % A != 0 || cols % A != 0) {
    throw ShapeError("MacPI extent " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " is not divisible by A=" + std::to_string(A));
  }
  MacPI m(channels, A, rows / A, cols / A, range);
  if (pixels.size() != m.pixels().size()) throw ShapeError("MacPI pixel count mismatch");
  m.pixels() = std::move(pixels);
  return m;
}

MacPI sai_to_macpi(const LightField4D& lf) {
  if (lf.U() != lf.V()) {
    throw ShapeError("MacPI needs a square angular grid, got U=" + std::to_string(lf.U()) +
                     " V=" + std::to_string(lf.V()));
  }
  const int A = lf.U();
  MacPI m(lf.channels(), A, lf.H(), lf.W(), lf.range());
  for (int c = 0; c < lf.channels(); ++c)
    for (int u = 0; u < A; ++u)
      for (int v = 0; v < A; ++v)
        for (int h = 0; h < lf.H(); ++h)
          for (int w = 0; w < lf.W(); ++w) m.at(c, h * A + u, w * A + v) = lf.at(c, u, v, h, w);
  return m;
}

LightField4D macpi_to_sai(const MacPI& m) {
  const int A = m.A();
  LightField4D lf(m.channels(), A, A, m.H(), m.W(), m.range());
  for (int c = 0; c < m.channels(); ++c)
    for (int u = 0; u < A; ++u)
      for (int v = 0; v < A; ++v)
        for (int h = 0; h < m.H(); ++h)
          for (int w = 0; w < m.W(); ++w) lf.at(c, u, v, h, w) = m.at(c, h * A + u, w * A + v);
  return lf;
}

EPIStack extract_epi(const LightField4D& lf, AxisPair axes, std::pair<int, int> fixed) {
  const auto [f0, f1] = fixed;
  auto check = [](int value, int extent, const char* axis) {
    if (value < 0 || value >= extent) {
      throw IndexError(std::string("fixed ") + axis + "=" + std::to_string(value) +
                       " outside [0," + std::to_string(extent) + ")");
    }
  };
  int rows = 0, cols = 0;
  switch (axes) {
    case AxisPair::UH:  // fixed (v, w)
      check(f0, lf.V(), "v"), check(f1, lf.W(), "w");
      rows = lf.U(), cols = lf.H();
      break;
    case AxisPair::VW:  // fixed (u, h)
      check(f0, lf.U(), "u"), check(f1, lf.H(), "h");
      rows = lf.V(), cols = lf.W();
      break;
    case AxisPair::UW:  // fixed (v, h)
      check(f0, lf.V(), "v"), check(f1, lf.H(), "h");
      rows = lf.U(), cols = lf.W();
      break;
    case AxisPair::VH:  // fixed (u, w)
      check(f0, lf.U(), "u"), check(f1, lf.W(), "w");
      rows = lf.V(), cols = lf.H();
      break;
  }

  EPIStack stack{axes, fixed, {}};
  for (int c = 0; c < lf.channels(); ++c) {
    Plane2D plane{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        switch (axes) {
          case AxisPair::UH: plane.at(i, j) = lf.at(c, i, f0, j, f1); break;
          case AxisPair::VW: plane.at(i, j) = lf.at(c, f0, i, f1, j); break;
          case AxisPair::UW: plane.at(i, j) = lf.at(c, i, f0, f1, j); break;
          case AxisPair::VH: plane.at(i, j) = lf.at(c, f0, i, j, f1); break;
        }
      }
    }
    stack.planes.push_back(std::move(plane));
  }
  return stack;
}

namespace {

// Smallest n >= extent with (angular * n) % multiple == 0.
int padded_extent(int extent, int angular, int multiple) {
  int n = extent;
  while ((static_cast<long long>(angular) * n) % multiple != 0) ++n;
  return n;
}

}  // namespace

std::pair<LightField4D, PadRecord> pad_lf(const LightField4D& lf, int multiple) {
  if (multiple < 1) throw ParameterError("pad multiple must be >= 1");
  PadRecord rec{lf.H(), lf.W(), padded_extent(lf.H(), lf.U(), multiple),
                padded_extent(lf.W(), lf.V(), multiple)};
  if (rec.padded_h == lf.H() && rec.padded_w == lf.W()) return {lf, rec};

  LightField4D out(lf.channels(), lf.U(), lf.V(), rec.padded_h, rec.padded_w, lf.range());
  for (int c = 0; c < lf.channels(); ++c)
    for (int u = 0; u < lf.U(); ++u)
      for (int v = 0; v < lf.V(); ++v)
        for (int h = 0; h < rec.padded_h; ++h)
          for (int w = 0; w < rec.padded_w; ++w)
            out.at(c, u, v, h, w) =
                lf.at(c, u, v, std::min(h, lf.H() - 1), std::min(w, lf.W() - 1));
  return {std::move(out), rec};
}

LightField4D crop_lf(const LightField4D& lf, const PadRecord& rec) {
  if (lf.H() != rec.padded_h || lf.W() != rec.padded_w) {
    throw ShapeError("crop: field extent does not match pad record");
  }
  if (rec.original_h == rec.padded_h && rec.original_w == rec.padded_w) return lf;
  LightField4D out(lf.channels(), lf.U(), lf.V(), rec.original_h, rec.original_w, lf.range());
  for (int c = 0; c < lf.channels(); ++c)
    for (int u = 0; u < lf.U(); ++u)
      for (int v = 0; v < lf.V(); ++v)
        for (int h = 0; h < rec.original_h; ++h)
          for (int w = 0; w < rec.original_w; ++w) out.at(c, u, v, h, w) = lf.at(c, u, v, h, w);
  return out;
}

std::vector<MacPI> crop_patches(const MacPI& m, const PatchSpec& spec) {
  const int A = m.A();
  const int stride_r = spec.stride_row == 0 ? spec.height : spec.stride_row;
  const int stride_c = spec.stride_col == 0 ? spec.width : spec.stride_col;
  if (spec.height < 1 || spec.width < 1 || stride_r < 1 || stride_c < 1 || spec.origin_row < 0 ||
      spec.origin_col < 0) {
    throw ShapeError("patch size, stride and origin must be positive");
  }
  for (int value : {spec.origin_row, spec.origin_col, spec.height, spec.width, stride_r, stride_c}) {
    if (value % A != 0) {
      throw AlignmentError("patch geometry value " + std::to_string(value) +
                           " is not a multiple of A=" + std::to_string(A));
    }
  }
  if (spec.origin_row + spec.height > m.rows() || spec.origin_col + spec.width > m.cols()) {
    throw ShapeError("patch does not fit inside the MacPI");
  }

  std::vector<MacPI> patches;
  for (int r0 = spec.origin_row; r0 + spec.height <= m.rows(); r0 += stride_r) {
    for (int c0 = spec.origin_col; c0 + spec.width <= m.cols(); c0 += stride_c) {
      MacPI p(m.channels(), A, spec.height / A, spec.width / A, m.range());
      for (int c = 0; c < m.channels(); ++c)
        for (int r = 0; r < spec.height; ++r)
          for (int k = 0; k < spec.width; ++k) p.at(c, r, k) = m.at(c, r0 + r, c0 + k);
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

}  // namespace lfc
