#pragma once

// 4D light-field container and the lossless re-arrangements between
// sub-aperture (SAI), macro-pixel (MacPI) and epipolar-plane (EPI) views.
//
// Canonical MacPI layout: pixel(h*A + u, w*A + v) == L(u, v, h, w).
// Channels are stored planar (channel-major) in every container.

#include <cstddef>
#include <utility>
#include <vector>

namespace lfc {

struct ValueRange {
  double lo = 0.0;
  double hi = 1.0;
  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

class LightField4D {
 public:
  LightField4D() = default;
  LightField4D(int channels, int U, int V, int H, int W, ValueRange range = {});

  int channels() const { return channels_; }
  int U() const { return U_; }
  int V() const { return V_; }
  int H() const { return H_; }
  int W() const { return W_; }
  ValueRange range() const { return range_; }
  void set_range(ValueRange r) { range_ = r; }
  std::size_t size() const { return samples_.size(); }

  std::size_t index(int c, int u, int v, int h, int w) const {
    return (((static_cast<std::size_t>(c) * U_ + u) * V_ + v) * H_ + h) * W_ + w;
  }
  double& at(int c, int u, int v, int h, int w) { return samples_[index(c, u, v, h, w)]; }
  double at(int c, int u, int v, int h, int w) const { return samples_[index(c, u, v, h, w)]; }

  std::vector<double>& samples() { return samples_; }
  const std::vector<double>& samples() const { return samples_; }

  // True when every sample lies inside range().
  bool in_range() const;

  friend bool operator==(const LightField4D&, const LightField4D&) = default;

 private:
  int channels_ = 0, U_ = 0, V_ = 0, H_ = 0, W_ = 0;
  ValueRange range_{};
  std::vector<double> samples_;
};

class MacPI {
 public:
  MacPI() = default;
  MacPI(int channels, int A, int H, int W, ValueRange range = {});

  int channels() const { return channels_; }
  int A() const { return A_; }
  int H() const { return H_; }
  int W() const { return W_; }
  int rows() const { return A_ * H_; }
  int cols() const { return A_ * W_; }
  ValueRange range() const { return range_; }

  double& at(int c, int row, int col) {
    return pixels_[(static_cast<std::size_t>(c) * rows() + row) * cols() + col];
  }
  double at(int c, int row, int col) const {
    return pixels_[(static_cast<std::size_t>(c) * rows() + row) * cols() + col];
  }
  std::vector<double>& pixels() { return pixels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  friend bool operator==(const MacPI&, const MacPI&) = default;

 private:
  int channels_ = 0, A_ = 0, H_ = 0, W_ = 0;
  ValueRange range_{};
  std::vector<double> pixels_;
};

MacPI sai_to_macpi(const LightField4D& lf);
LightField4D macpi_to_sai(const MacPI& m);

// Reinterprets a raw (channels, rows, cols) plane stack as a MacPI with
// angular extent A. Throws ShapeError when rows/cols are not multiples of A.
MacPI make_macpi(int channels, int A, int rows, int cols, std::vector<double> pixels,
                 ValueRange range = {});

// ---------------------------------------------------------------------------
// EPI views

enum class AxisPair { UH, VW, UW, VH };

struct Plane2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols + j]; }
};

// Planes for one (axis_pair, fixed) choice, one plane per channel. The plane
// row axis is the first named axis and the column axis the second, e.g. for
// UH plane(i, j) = L(u=i, v=fixed.first, h=j, w=fixed.second).
// Fixed coordinates are given in canonical (u, v, h, w) order of the two
// axes that are *not* in the pair.
struct EPIStack {
  AxisPair axis_pair = AxisPair::UH;
  std::pair<int, int> fixed{0, 0};
  std::vector<Plane2D> planes;
};

EPIStack extract_epi(const LightField4D& lf, AxisPair axes, std::pair<int, int> fixed);

// ---------------------------------------------------------------------------
// Padding and patching

struct PadRecord {
  int original_h = 0;
  int original_w = 0;
  int padded_h = 0;
  int padded_w = 0;
  friend bool operator==(const PadRecord&, const PadRecord&) = default;
};

// Pads the spatial extents by edge replication until A*H and A*W are
// multiples of `multiple`. Angular extents are untouched.
std::pair<LightField4D, PadRecord> pad_lf(const LightField4D& lf, int multiple);
LightField4D crop_lf(const LightField4D& lf, const PadRecord& record);

struct PatchSpec {
  int origin_row = 0;
  int origin_col = 0;
  int height = 0;
  int width = 0;
  int stride_row = 0;  // 0: same as height
  int stride_col = 0;  // 0: same as width
};

// Patches tiled from the origin with the given stride, each a valid MacPI.
// Every origin, size and stride must be a multiple of A; throws
// AlignmentError otherwise and ShapeError when no patch fits.
std::vector<MacPI> crop_patches(const MacPI& m, const PatchSpec& spec);

}  // namespace lfc
