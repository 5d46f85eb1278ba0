#include "lfc/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <initializer_list>
#include <numbers>

#include "lfc/errors.hpp"

namespace lfc {

namespace math {

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); }

double gelu(double x) { return x * normal_cdf(x); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace math

namespace testing {
namespace {
std::atomic<bool> g_gradient_bug{false};
}
void set_gradient_bug(bool on) { g_gradient_bug = on; }
bool gradient_bug() { return g_gradient_bug; }
}  // namespace testing

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool any_needs(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.valid() && v.needs_grad()) return true;
  return false;
}

Tape& same_tape(Var a, Var b) {
  if (b.valid() && &a.tape() != &b.tape()) throw StateError("operands recorded on different tapes");
  return a.tape();
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected (N,C,H,W), got " + to_string(t.shape()));
  }
}

int self_id(Tape& tape) { return static_cast<int>(tape.size()); }

// Sliding-window layout shared by conv and transposed conv: a (C, H, W)
// image is unrolled into (C*kh*kw, Ho*Wo) columns.
struct Geometry {
  int C, H, W, Ho, Wo, kh, kw, sh, sw, dh, dw, pt, pl;
  PadMode mode;
};

// Input coordinate for an output coordinate, or -1 when it falls into zero
// padding.
inline int source_index(int i, int extent, PadMode mode) {
  if (i >= 0 && i < extent) return i;
  if (mode == PadMode::zero) return -1;
  return std::clamp(i, 0, extent - 1);
}

void im2col(const double* x, const Geometry& g, double* col) {
  const std::size_t hwo = static_cast<std::size_t>(g.Ho) * g.Wo;
  for (int c = 0; c < g.C; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.H * g.W;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = col + (static_cast<std::size_t>(c * g.kh + ki) * g.kw + kj) * hwo;
        for (int oh = 0; oh < g.Ho; ++oh) {
          double* dst = row + static_cast<std::size_t>(oh) * g.Wo;
          const int ih = source_index(oh * g.sh - g.pt + ki * g.dh, g.H, g.mode);
          if (ih < 0) {
            std::fill(dst, dst + g.Wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ih) * g.W;
          for (int ow = 0; ow < g.Wo; ++ow) {
            const int iw = source_index(ow * g.sw - g.pl + kj * g.dw, g.W, g.mode);
            dst[ow] = iw < 0 ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back, accumulating into x.
void col2im(const double* col, const Geometry& g, double* x) {
  const std::size_t hwo = static_cast<std::size_t>(g.Ho) * g.Wo;
  for (int c = 0; c < g.C; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * g.H * g.W;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = col + (static_cast<std::size_t>(c * g.kh + ki) * g.kw + kj) * hwo;
        for (int oh = 0; oh < g.Ho; ++oh) {
          const int ih = source_index(oh * g.sh - g.pt + ki * g.dh, g.H, g.mode);
          if (ih < 0) continue;
          const double* src = row + static_cast<std::size_t>(oh) * g.Wo;
          double* dst = xc + static_cast<std::size_t>(ih) * g.W;
          for (int ow = 0; ow < g.Wo; ++ow) {
            const int iw = source_index(ow * g.sw - g.pl + kj * g.dw, g.W, g.mode);
            if (iw >= 0) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <class Fwd, class Bwd>
Var unary(Var x, Fwd fwd, Bwd dfdx) {
  Tape& tape = x.tape();
  const Tensor& X = x.value();
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = fwd(X[i]);
  const int self = self_id(tape);
  return tape.record(std::move(Y), x.needs_grad(), [&tape, x, self, dfdx](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    const Tensor& X = tape.value(x.id());
    const Tensor& Y = tape.value(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dfdx(X[i], Y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

int ConvSpec::out_h(int in_h) const {
  const int span = dilation_h * (kernel_h - 1) + 1;
  const int padded = in_h + pad_top + pad_bottom;
  return padded < span ? 0 : (padded - span) / stride_h + 1;
}

int ConvSpec::out_w(int in_w) const {
  const int span = dilation_w * (kernel_w - 1) + 1;
  const int padded = in_w + pad_left + pad_right;
  return padded < span ? 0 : (padded - span) / stride_w + 1;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride_h < 1 ||
      stride_w < 1 || dilation_h < 1 || dilation_w < 1) {
    throw ShapeError("conv spec extents must be >= 1");
  }
  if (pad_top < 0 || pad_bottom < 0 || pad_left < 0 || pad_right < 0) {
    throw ShapeError("conv padding must be non-negative");
  }
}

ConvSpec& ConvSpec::same_padding() {
  const int th = dilation_h * (kernel_h - 1);
  const int tw = dilation_w * (kernel_w - 1);
  pad_top = th / 2;
  pad_bottom = th - th / 2;
  pad_left = tw / 2;
  pad_right = tw - tw / 2;
  return *this;
}

ConvSpec& ConvSpec::symmetric_padding(int ph, int pw) {
  pad_top = pad_bottom = ph;
  pad_left = pad_right = pw;
  return *this;
}

Var conv2d(Var x, Var weight, Var bias, const ConvSpec& spec) {
  spec.validate();
  Tape& tape = same_tape(x, weight);
  same_tape(x, bias);
  const Tensor& X = x.value();
  require_rank4(X, "conv2d");
  if (X.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(X.dim(1)) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  require_same_shape(weight.shape(), spec.weight_shape(), "conv2d weight");
  if (bias.valid()) require_same_shape(bias.shape(), {spec.out_channels}, "conv2d bias");

  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int Ho = spec.out_h(H), Wo = spec.out_w(W);
  if (Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: input " + to_string(X.shape()) + " smaller than kernel span");
  }
  const int O = spec.out_channels;
  const Geometry geo{C,           H,           W,           Ho,           Wo,
                     spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, spec.dilation_h,
                     spec.dilation_w, spec.pad_top, spec.pad_left, spec.pad_mode};
  const bool pointwise = spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 &&
                         spec.stride_w == 1 && spec.pad_top + spec.pad_bottom + spec.pad_left +
                                                       spec.pad_right ==
                                                   0;
  const int ckk = C * spec.kernel_h * spec.kernel_w;
  const int hwo = Ho * Wo;

  Tensor Y({N, O, Ho, Wo});
  Buffer col(pointwise ? 0 : static_cast<std::size_t>(ckk) * hwo);
  CMapMat Wm(weight.value().ptr(), O, ckk);
  for (int n = 0; n < N; ++n) {
    const double* xn = X.ptr() + static_cast<std::size_t>(n) * C * H * W;
    if (!pointwise) im2col(xn, geo, col.data());
    CMapMat Cm(pointwise ? xn : col.data(), ckk, hwo);
    MapMat Ym(Y.ptr() + static_cast<std::size_t>(n) * O * hwo, O, hwo);
    Ym.noalias() = Wm * Cm;
    if (bias.valid()) {
      const Tensor& B = bias.value();
      for (int o = 0; o < O; ++o) Ym.row(o).array() += B[o];
    }
  }

  return tape.record(
      std::move(Y), any_needs({x, weight, bias}),
      [&tape, x, weight, bias, geo, pointwise, ckk, hwo, N, O](std::span<const double> g) {
        auto gx = tape.grad_buffer(x.id());
        auto gw = tape.grad_buffer(weight.id());
        auto gb = bias.valid() ? tape.grad_buffer(bias.id()) : std::span<double>{};
        const Tensor& X = tape.value(x.id());
        CMapMat Wm(tape.value(weight.id()).ptr(), O, ckk);
        const std::size_t in_size = static_cast<std::size_t>(geo.C) * geo.H * geo.W;
        Buffer col(pointwise ? 0 : static_cast<std::size_t>(ckk) * hwo);
        Buffer dcol(gx.empty() || pointwise ? 0 : static_cast<std::size_t>(ckk) * hwo);
        RowMat dw_acc;
        if (!gw.empty()) dw_acc = RowMat::Zero(O, ckk);
        for (int n = 0; n < N; ++n) {
          CMapMat dY(g.data() + static_cast<std::size_t>(n) * O * hwo, O, hwo);
          if (!gb.empty())
            for (int o = 0; o < O; ++o) gb[o] += dY.row(o).sum();
          const double* xn = X.ptr() + n * in_size;
          if (!gw.empty()) {
            if (!pointwise) im2col(xn, geo, col.data());
            CMapMat Cm(pointwise ? xn : col.data(), ckk, hwo);
            dw_acc.noalias() += dY * Cm.transpose();
          }
          if (!gx.empty()) {
            if (pointwise) {
              MapMat dX(gx.data() + n * in_size, ckk, hwo);
              dX.noalias() += Wm.transpose() * dY;
            } else {
              MapMat dC(dcol.data(), ckk, hwo);
              dC.noalias() = Wm.transpose() * dY;
              col2im(dcol.data(), geo, gx.data() + n * in_size);
            }
          }
        }
        if (!gw.empty()) {
          if (testing::gradient_bug()) dw_acc *= 1.01;
          MapMat(gw.data(), O, ckk) += dw_acc;
        }
      });
}

Var conv_transpose2d(Var x, Var weight, Var bias, const DeconvSpec& spec) {
  Tape& tape = same_tape(x, weight);
  same_tape(x, bias);
  const Tensor& X = x.value();
  require_rank4(X, "conv_transpose2d");
  if (X.dim(1) != spec.in_channels) throw ShapeError("conv_transpose2d: channel mismatch");
  require_same_shape(weight.shape(), spec.weight_shape(), "conv_transpose2d weight");
  if (bias.valid()) require_same_shape(bias.shape(), {spec.out_channels}, "conv_transpose2d bias");
  const int N = X.dim(0), Ci = X.dim(1), Hi = X.dim(2), Wi = X.dim(3);
  const int Ho = spec.out_h(Hi), Wo = spec.out_w(Wi);
  if (Ho < 1 || Wo < 1) throw ShapeError("conv_transpose2d: empty output");
  const int Co = spec.out_channels;
  const Geometry geo{Co,          Ho,          Wo,          Hi, Wi, spec.kernel_h, spec.kernel_w,
                     spec.stride_h, spec.stride_w, 1,         1,  spec.pad_h,    spec.pad_w,
                     PadMode::zero};
  const int ckk = Co * spec.kernel_h * spec.kernel_w;
  const int hwi = Hi * Wi;
  const std::size_t out_size = static_cast<std::size_t>(Co) * Ho * Wo;

  Tensor Y({N, Co, Ho, Wo});
  Buffer cols(static_cast<std::size_t>(ckk) * hwi);
  CMapMat Wm(weight.value().ptr(), Ci, ckk);
  for (int n = 0; n < N; ++n) {
    CMapMat Xn(X.ptr() + static_cast<std::size_t>(n) * Ci * hwi, Ci, hwi);
    MapMat Cm(cols.data(), ckk, hwi);
    Cm.noalias() = Wm.transpose() * Xn;
    double* yn = Y.ptr() + n * out_size;
    col2im(cols.data(), geo, yn);
    if (bias.valid()) {
      const Tensor& B = bias.value();
      for (int o = 0; o < Co; ++o)
        for (int i = 0; i < Ho * Wo; ++i) yn[static_cast<std::size_t>(o) * Ho * Wo + i] += B[o];
    }
  }

  return tape.record(
      std::move(Y), any_needs({x, weight, bias}),
      [&tape, x, weight, bias, geo, ckk, hwi, N, Ci, Co, out_size](std::span<const double> g) {
        auto gx = tape.grad_buffer(x.id());
        auto gw = tape.grad_buffer(weight.id());
        auto gb = bias.valid() ? tape.grad_buffer(bias.id()) : std::span<double>{};
        const Tensor& X = tape.value(x.id());
        CMapMat Wm(tape.value(weight.id()).ptr(), Ci, ckk);
        Buffer dcols(static_cast<std::size_t>(ckk) * hwi);
        const int hwo = geo.H * geo.W;
        for (int n = 0; n < N; ++n) {
          const double* gn = g.data() + n * out_size;
          if (!gb.empty())
            for (int o = 0; o < Co; ++o)
              for (int i = 0; i < hwo; ++i) gb[o] += gn[static_cast<std::size_t>(o) * hwo + i];
          if (gx.empty() && gw.empty()) continue;
          im2col(gn, geo, dcols.data());
          CMapMat dC(dcols.data(), ckk, hwi);
          if (!gx.empty()) {
            MapMat dX(gx.data() + static_cast<std::size_t>(n) * Ci * hwi, Ci, hwi);
            dX.noalias() += Wm * dC;
          }
          if (!gw.empty()) {
            CMapMat Xn(X.ptr() + static_cast<std::size_t>(n) * Ci * hwi, Ci, hwi);
            MapMat(gw.data(), Ci, ckk).noalias() += Xn * dC.transpose();
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor Y(a.shape());
  const Tensor &A = a.value(), &B = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] + B[i];
  return tape.record(std::move(Y), any_needs({a, b}), [&tape, a, b](std::span<const double> g) {
    for (Var v : {a, b}) {
      auto gv = tape.grad_buffer(v.id());
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor Y(a.shape());
  const Tensor &A = a.value(), &B = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] - B[i];
  return tape.record(std::move(Y), any_needs({a, b}), [&tape, a, b](std::span<const double> g) {
    auto ga = tape.grad_buffer(a.id());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = tape.grad_buffer(b.id());
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor Y(a.shape());
  const Tensor &A = a.value(), &B = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] * B[i];
  return tape.record(std::move(Y), any_needs({a, b}), [&tape, a, b](std::span<const double> g) {
    const Tensor &A = tape.value(a.id()), &B = tape.value(b.id());
    auto ga = tape.grad_buffer(a.id());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * B[i];
    auto gb = tape.grad_buffer(b.id());
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * A[i];
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(a, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var gelu(Var x) {
  return unary(x, [](double v) { return math::gelu(v); },
               [](double v, double) { return math::normal_cdf(v) + v * math::normal_pdf(v); });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(x, [](double v) { return math::sigmoid(v); },
               [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary(x, [](double v) { return math::softplus(v); },
               [](double v, double) { return math::sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Normalization

Var gdn(Var x, Var beta, Var gamma, bool inverse) {
  Tape& tape = same_tape(x, beta);
  same_tape(x, gamma);
  const Tensor& X = x.value();
  require_rank4(X, "gdn");
  const int N = X.dim(0), C = X.dim(1), hw = X.dim(2) * X.dim(3);
  require_same_shape(beta.shape(), {C}, "gdn beta");
  require_same_shape(gamma.shape(), {C, C}, "gdn gamma");
  for (double v : beta.value().data())
    if (!std::isfinite(v)) throw ParameterError("gdn: non-finite beta");
  for (double v : gamma.value().data())
    if (!std::isfinite(v)) throw ParameterError("gdn: non-finite gamma");

  CMapMat G(gamma.value().ptr(), C, C);
  Eigen::Map<const Eigen::VectorXd> Bv(beta.value().ptr(), C);
  Tensor Y(X.shape());
  RowMat R(C, hw);
  for (int n = 0; n < N; ++n) {
    CMapMat Xn(X.ptr() + static_cast<std::size_t>(n) * C * hw, C, hw);
    R.noalias() = G * Xn.array().square().matrix();
    R.colwise() += Bv;
    if ((R.array() <= 0.0).any()) throw NumericError("gdn: non-positive normalizer");
    MapMat Yn(Y.ptr() + static_cast<std::size_t>(n) * C * hw, C, hw);
    if (inverse) Yn = Xn.array() * R.array().sqrt();
    else Yn = Xn.array() * R.array().rsqrt();
  }

  return tape.record(std::move(Y), any_needs({x, beta, gamma}),
                     [&tape, x, beta, gamma, inverse, N, C, hw](std::span<const double> g) {
    const Tensor& X = tape.value(x.id());
    CMapMat G(tape.value(gamma.id()).ptr(), C, C);
    Eigen::Map<const Eigen::VectorXd> Bv(tape.value(beta.id()).ptr(), C);
    auto gx = tape.grad_buffer(x.id());
    auto gbeta = tape.grad_buffer(beta.id());
    auto ggamma = tape.grad_buffer(gamma.id());
    RowMat X2(C, hw), R(C, hw), T(C, hw);
    for (int n = 0; n < N; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * C * hw;
      CMapMat Xn(X.ptr() + off, C, hw);
      CMapMat Gn(g.data() + off, C, hw);
      X2 = Xn.array().square();
      R.noalias() = G * X2;
      R.colwise() += Bv;
      // T = g * dy/dr
      if (inverse) T = 0.5 * Gn.array() * Xn.array() * R.array().rsqrt();
      else T = -0.5 * Gn.array() * Xn.array() * R.array().rsqrt() / R.array();
      if (!gbeta.empty()) Eigen::Map<Eigen::VectorXd>(gbeta.data(), C) += T.rowwise().sum();
      if (!ggamma.empty()) MapMat(ggamma.data(), C, C).noalias() += T * X2.transpose();
      if (!gx.empty()) {
        MapMat dX(gx.data() + off, C, hw);
        RowMat back = G.transpose() * T;
        if (inverse) dX.array() += Gn.array() * R.array().sqrt() + 2.0 * Xn.array() * back.array();
        else dX.array() += Gn.array() * R.array().rsqrt() + 2.0 * Xn.array() * back.array();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape and reduction ops

Var global_avg_pool(Var x) {
  Tape& tape = x.tape();
  const Tensor& X = x.value();
  require_rank4(X, "global_avg_pool");
  const int N = X.dim(0), C = X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor Y({N, C, 1, 1});
  for (int i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (int k = 0; k < hw; ++k) s += X[static_cast<std::size_t>(i) * hw + k];
    Y[i] = s / hw;
  }
  return tape.record(std::move(Y), x.needs_grad(), [&tape, x, N, C, hw](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    for (int i = 0; i < N * C; ++i)
      for (int k = 0; k < hw; ++k) gx[static_cast<std::size_t>(i) * hw + k] += g[i] / hw;
  });
}

Var scale_channels(Var x, Var s) {
  Tape& tape = same_tape(x, s);
  const Tensor& X = x.value();
  require_rank4(X, "scale_channels");
  const int N = X.dim(0), C = X.dim(1), hw = X.dim(2) * X.dim(3);
  require_same_shape(s.shape(), {N, C, 1, 1}, "scale_channels factors");
  Tensor Y(X.shape());
  const Tensor& S = s.value();
  for (int i = 0; i < N * C; ++i)
    for (int k = 0; k < hw; ++k) {
      const std::size_t j = static_cast<std::size_t>(i) * hw + k;
      Y[j] = X[j] * S[i];
    }
  return tape.record(std::move(Y), any_needs({x, s}), [&tape, x, s, N, C, hw](std::span<const double> g) {
    const Tensor &X = tape.value(x.id()), &S = tape.value(s.id());
    auto gx = tape.grad_buffer(x.id());
    auto gs = tape.grad_buffer(s.id());
    for (int i = 0; i < N * C; ++i)
      for (int k = 0; k < hw; ++k) {
        const std::size_t j = static_cast<std::size_t>(i) * hw + k;
        if (!gx.empty()) gx[j] += g[j] * S[i];
        if (!gs.empty()) gs[i] += g[j] * X[j];
      }
  });
}

Var concat(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Tape& tape = xs[0].tape();
  const Tensor& first = xs[0].value();
  require_rank4(first, "concat");
  const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
  int C = 0;
  bool needs = false;
  for (const Var& v : xs) {
    same_tape(xs[0], v);
    const Tensor& t = v.value();
    require_rank4(t, "concat");
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
      throw ShapeError("concat: " + to_string(t.shape()) + " vs " + to_string(first.shape()));
    }
    C += t.dim(1);
    needs = needs || v.needs_grad();
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor Y({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    double* dst = Y.ptr() + static_cast<std::size_t>(n) * C * hw;
    for (const Var& v : xs) {
      const Tensor& t = v.value();
      const std::size_t block = static_cast<std::size_t>(t.dim(1)) * hw;
      std::copy_n(t.ptr() + n * block, block, dst);
      dst += block;
    }
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return tape.record(std::move(Y), needs, [&tape, inputs, N, C, hw](std::span<const double> g) {
    std::size_t channel_offset = 0;
    for (const Var& v : inputs) {
      const std::size_t block = static_cast<std::size_t>(v.dim(1)) * hw;
      auto gv = tape.grad_buffer(v.id());
      if (!gv.empty()) {
        for (int n = 0; n < N; ++n) {
          const double* src = g.data() + static_cast<std::size_t>(n) * C * hw + channel_offset;
          for (std::size_t i = 0; i < block; ++i) gv[n * block + i] += src[i];
        }
      }
      channel_offset += block;
    }
  });
}

Var slice_channels(Var x, int begin, int end) {
  Tape& tape = x.tape();
  const Tensor& X = x.value();
  require_rank4(X, "slice_channels");
  const int N = X.dim(0), C = X.dim(1);
  if (begin < 0 || end > C || begin >= end) throw ShapeError("slice_channels: bad channel range");
  const std::size_t hw = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
  const int Cs = end - begin;
  Tensor Y({N, Cs, X.dim(2), X.dim(3)});
  for (int n = 0; n < N; ++n)
    std::copy_n(X.ptr() + (static_cast<std::size_t>(n) * C + begin) * hw, Cs * hw,
                Y.ptr() + static_cast<std::size_t>(n) * Cs * hw);
  return tape.record(std::move(Y), x.needs_grad(), [&tape, x, N, C, Cs, begin, hw](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    for (int n = 0; n < N; ++n) {
      double* dst = gx.data() + (static_cast<std::size_t>(n) * C + begin) * hw;
      const double* src = g.data() + static_cast<std::size_t>(n) * Cs * hw;
      for (std::size_t i = 0; i < Cs * hw; ++i) dst[i] += src[i];
    }
  });
}

Var upsample_nearest(Var x, int fh, int fw) {
  if (fh < 1 || fw < 1) throw ShapeError("upsample factor must be >= 1");
  Tape& tape = x.tape();
  const Tensor& X = x.value();
  require_rank4(X, "upsample_nearest");
  const int NC = X.dim(0) * X.dim(1), H = X.dim(2), W = X.dim(3);
  const int Ho = H * fh, Wo = W * fw;
  Tensor Y({X.dim(0), X.dim(1), Ho, Wo});
  for (int i = 0; i < NC; ++i)
    for (int r = 0; r < Ho; ++r)
      for (int c = 0; c < Wo; ++c)
        Y[(static_cast<std::size_t>(i) * Ho + r) * Wo + c] =
            X[(static_cast<std::size_t>(i) * H + r / fh) * W + c / fw];
  return tape.record(std::move(Y), x.needs_grad(), [&tape, x, NC, H, W, fh, fw](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    const int Ho = H * fh, Wo = W * fw;
    for (int i = 0; i < NC; ++i)
      for (int r = 0; r < Ho; ++r)
        for (int c = 0; c < Wo; ++c)
          gx[(static_cast<std::size_t>(i) * H + r / fh) * W + c / fw] +=
              g[(static_cast<std::size_t>(i) * Ho + r) * Wo + c];
  });
}

Var select_mask(Var x, const Tensor& mask) {
  Tape& tape = x.tape();
  const Tensor& X = x.value();
  require_rank4(X, "select_mask");
  const bool full = mask.shape() == X.shape();
  if (!full) require_same_shape(mask.shape(), {1, 1, X.dim(2), X.dim(3)}, "select_mask mask");
  const std::size_t hw = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
  auto keep = [&mask, full, hw](std::size_t i) { return mask[full ? i : i % hw] != 0.0; };
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = keep(i) ? X[i] : 0.0;
  return tape.record(std::move(Y), x.needs_grad(), [&tape, x, mask, full, hw](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (mask[full ? i : i % hw] != 0.0) gx[i] += g[i];
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = x.tape();
  Tensor Y = Tensor(x.shape(), x.value().values());
  Y.reshape(std::move(shape));
  return tape.record(std::move(Y), x.needs_grad(), [&tape, x](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

Var sum(Var x) {
  Tape& tape = x.tape();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tape.record(Tensor({1}, s), x.needs_grad(), [&tape, x](std::span<const double> g) {
    auto gx = tape.grad_buffer(x.id());
    for (double& v : gx) v += g[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "mse");
  const Tensor &A = a.value(), &B = b.value();
  const double n = static_cast<double>(A.size());
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
  return tape.record(Tensor({1}, s / n), any_needs({a, b}), [&tape, a, b, n](std::span<const double> g) {
    const Tensor &A = tape.value(a.id()), &B = tape.value(b.id());
    auto ga = tape.grad_buffer(a.id());
    auto gb = tape.grad_buffer(b.id());
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double d = 2.0 * (A[i] - B[i]) / n * g[0];
      if (!ga.empty()) ga[i] += d;
      if (!gb.empty()) gb[i] -= d;
    }
  });
}

// ---------------------------------------------------------------------------
// Likelihood ops

Var gaussian_likelihood(Var y, Var mu, Var sigma, double half_width) {
  Tape& tape = same_tape(y, mu);
  same_tape(y, sigma);
  require_same_shape(y.shape(), mu.shape(), "gaussian_likelihood mean");
  require_same_shape(y.shape(), sigma.shape(), "gaussian_likelihood scale");
  const Tensor &Yv = y.value(), &M = mu.value(), &S = sigma.value();
  Tensor P(Yv.shape());
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!(S[i] > 0.0)) throw NumericError("gaussian_likelihood: non-positive scale");
    const double v = std::abs(Yv[i] - M[i]);
    P[i] = math::normal_cdf((half_width - v) / S[i]) - math::normal_cdf((-half_width - v) / S[i]);
  }
  return tape.record(std::move(P), any_needs({y, mu, sigma}),
                     [&tape, y, mu, sigma, half_width](std::span<const double> g) {
    const Tensor &Yv = tape.value(y.id()), &M = tape.value(mu.id()), &S = tape.value(sigma.id());
    auto gy = tape.grad_buffer(y.id());
    auto gm = tape.grad_buffer(mu.id());
    auto gs = tape.grad_buffer(sigma.id());
    for (std::size_t i = 0; i < Yv.size(); ++i) {
      const double d = Yv[i] - M[i];
      const double v = std::abs(d);
      const double a = (half_width - v) / S[i];
      const double b = (-half_width - v) / S[i];
      const double pa = math::normal_pdf(a), pb = math::normal_pdf(b);
      const double dv = (pb - pa) / S[i];
      const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      if (!gy.empty()) gy[i] += g[i] * dv * sgn;
      if (!gm.empty()) gm[i] -= g[i] * dv * sgn;
      if (!gs.empty()) gs[i] += g[i] * (pb * b - pa * a) / S[i];
    }
  });
}

Var lower_bound(Var x, double bound) {
  return unary(x, [bound](double v) { return v > bound ? v : bound; },
               [bound](double v, double) { return v > bound ? 1.0 : 0.0; });
}

Var neg_log2_sum(Var p) {
  Tape& tape = p.tape();
  double bits = 0.0;
  for (double v : p.value().data()) {
    if (!(v > 0.0)) throw NumericError("estimate_bits: probability must be positive");
    bits -= std::log2(v);
  }
  return tape.record(Tensor({1}, bits), p.needs_grad(), [&tape, p](std::span<const double> g) {
    const Tensor& P = tape.value(p.id());
    auto gp = tape.grad_buffer(p.id());
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] -= g[0] / (P[i] * std::numbers::ln2);
  });
}

}  // namespace lfc
