#include "lfc/entropy.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "lfc/errors.hpp"

namespace lfc {

Var estimate_bits(Var likelihoods) { return neg_log2_sum(likelihoods); }

Var scale_from_raw(Var raw) { return add_scalar(softplus(raw), kSigmaBound); }

// ---------------------------------------------------------------------------
// Factorized prior

namespace {

constexpr int kMaxWidth = 3;
using Vec = std::array<double, kMaxWidth>;

// One channel's cascade with its parameters already transformed:
// sH = softplus(H), ta = tanh(a).
struct Chain {
  static constexpr int depth = 4;
  static constexpr int widths[depth + 1] = {1, 3, 3, 3, 1};
  std::array<std::vector<double>, depth> sH;
  std::array<std::vector<double>, depth> dsH;  // sigmoid(H) = d softplus / dH
  std::array<std::vector<double>, depth> b;
  std::array<std::vector<double>, depth - 1> ta;

  struct Trace {
    std::array<Vec, depth + 1> v{};  // layer inputs
    std::array<Vec, depth> pre{};
  };

  double eval(double x, Trace* trace) const {
    Vec v{x, 0, 0};
    for (int k = 0; k < depth; ++k) {
      const int in = widths[k], out = widths[k + 1];
      Vec pre{};
      for (int i = 0; i < out; ++i) {
        double s = b[k][i];
        for (int j = 0; j < in; ++j) s += sH[k][i * in + j] * v[j];
        pre[i] = s;
      }
      if (trace) {
        trace->v[k] = v;
        trace->pre[k] = pre;
      }
      if (k < depth - 1) {
        for (int i = 0; i < out; ++i) v[i] = pre[i] + ta[k][i] * std::tanh(pre[i]);
      } else {
        v = pre;
      }
    }
    return v[0];
  }

  struct Grads {
    std::array<std::vector<double>, depth> H;
    std::array<std::vector<double>, depth> b;
    std::array<std::vector<double>, depth - 1> a;
  };

  // Backpropagates dl through a traced evaluation; returns dl/dx.
  double backward(const Trace& t, double dl, Grads* grads) const {
    Vec g{dl, 0, 0};
    for (int k = depth - 1; k >= 0; --k) {
      const int in = widths[k], out = widths[k + 1];
      Vec gpre{};
      for (int i = 0; i < out; ++i) {
        if (k < depth - 1) {
          const double th = std::tanh(t.pre[k][i]);
          gpre[i] = g[i] * (1.0 + ta[k][i] * (1.0 - th * th));
          if (grads) grads->a[k][i] += g[i] * th * (1.0 - ta[k][i] * ta[k][i]);
        } else {
          gpre[i] = g[i];
        }
      }
      Vec gv{};
      for (int i = 0; i < out; ++i) {
        if (grads) grads->b[k][i] += gpre[i];
        for (int j = 0; j < in; ++j) {
          if (grads) grads->H[k][i * in + j] += gpre[i] * t.v[k][j] * dsH[k][i * in + j];
          gv[j] += sH[k][i * in + j] * gpre[i];
        }
      }
      g = gv;
    }
    return g[0];
  }
};

std::size_t layer_size(int k) { return static_cast<std::size_t>(Chain::widths[k + 1]) * Chain::widths[k]; }

Chain make_chain(int c, const std::array<const Tensor*, 4>& H, const std::array<const Tensor*, 4>& B,
                 const std::array<const Tensor*, 3>& A) {
  Chain ch;
  for (int k = 0; k < Chain::depth; ++k) {
    const std::size_t n = layer_size(k), out = Chain::widths[k + 1];
    ch.sH[k].resize(n);
    ch.dsH[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = (*H[k])[c * n + i];
      ch.sH[k][i] = math::softplus(h);
      ch.dsH[k][i] = math::sigmoid(h);
    }
    ch.b[k].assign(B[k]->ptr() + c * out, B[k]->ptr() + (c + 1) * out);
    if (k < Chain::depth - 1) {
      ch.ta[k].resize(out);
      for (std::size_t i = 0; i < out; ++i) ch.ta[k][i] = std::tanh((*A[k])[c * out + i]);
    }
  }
  return ch;
}

// p = |sigmoid(s*u) - sigmoid(s*l)| with s = -sign(u + l), evaluated on the
// side where the sigmoids are not saturated near 1.
struct BinEval {
  double p, dp_du, dp_dl;
};

BinEval bin_from_logits(double u, double l) {
  const double s = u + l > 0.0 ? -1.0 : 1.0;
  const double su = math::sigmoid(s * u), sl = math::sigmoid(s * l);
  const double q = su - sl;
  const double sign = q < 0.0 ? -1.0 : 1.0;
  return {sign * q, sign * s * su * (1.0 - su), -sign * s * sl * (1.0 - sl)};
}

}  // namespace

FactorizedPrior::FactorizedPrior(ParameterStore& store, const std::string& name, int channels, Rng& rng,
                                 double init_scale)
    : channels_(channels) {
  if (channels < 1) throw ShapeError("factorized prior: channels must be >= 1");
  const double scale = std::pow(init_scale, 1.0 / (kDepth + 1));
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  for (int k = 0; k < kDepth; ++k) {
    const int in = kWidths[k], out = kWidths[k + 1];
    const double init = std::log(std::expm1(1.0 / scale / out));
    matrices_[k] = &store.create(name + ".H" + std::to_string(k), Tensor({channels, out, in}, init));
    Tensor b({channels, out});
    for (double& v : b.data()) v = unif(rng);
    biases_[k] = &store.create(name + ".b" + std::to_string(k), std::move(b));
    if (k < kDepth - 1) factors_[k] = &store.create(name + ".a" + std::to_string(k), Tensor({channels, out}));
  }
}

double FactorizedPrior::logit(int c, double x) const {
  const Chain ch = make_chain(c, {matrices_[0], matrices_[1], matrices_[2], matrices_[3]},
                              {biases_[0], biases_[1], biases_[2], biases_[3]},
                              {factors_[0], factors_[1], factors_[2]});
  return ch.eval(x, nullptr);
}

double FactorizedPrior::bin_probability(int c, double x, double half_width) const {
  const Chain ch = make_chain(c, {matrices_[0], matrices_[1], matrices_[2], matrices_[3]},
                              {biases_[0], biases_[1], biases_[2], biases_[3]},
                              {factors_[0], factors_[1], factors_[2]});
  return bin_from_logits(ch.eval(x + half_width, nullptr), ch.eval(x - half_width, nullptr)).p;
}

Var FactorizedPrior::likelihood(Var z, double half_width) const {
  Tape& tape = z.tape();
  const Tensor& Z = z.value();
  if (Z.rank() != 4 || Z.dim(1) != channels_) {
    throw ShapeError("factorized prior: expected " + std::to_string(channels_) + " channels, got " +
                     to_string(Z.shape()));
  }
  std::array<Var, kDepth> Hv, Bv;
  std::array<Var, kDepth - 1> Av;
  for (int k = 0; k < kDepth; ++k) {
    Hv[k] = tape.parameter(*matrices_[k]);
    Bv[k] = tape.parameter(*biases_[k]);
    if (k < kDepth - 1) Av[k] = tape.parameter(*factors_[k]);
  }
  const int N = Z.dim(0), C = Z.dim(1);
  const std::size_t hw = static_cast<std::size_t>(Z.dim(2)) * Z.dim(3);
  Tensor P(Z.shape());
  for (int c = 0; c < C; ++c) {
    const Chain ch = make_chain(c, {matrices_[0], matrices_[1], matrices_[2], matrices_[3]},
                                {biases_[0], biases_[1], biases_[2], biases_[3]},
                                {factors_[0], factors_[1], factors_[2]});
    for (int n = 0; n < N; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + i;
        P[idx] = bin_from_logits(ch.eval(Z[idx] + half_width, nullptr), ch.eval(Z[idx] - half_width, nullptr)).p;
      }
  }
  bool needs = z.needs_grad();
  for (int k = 0; k < kDepth; ++k) needs = needs || Hv[k].needs_grad() || Bv[k].needs_grad();
  for (const Var& a : Av) needs = needs || a.needs_grad();

  return tape.record(std::move(P), needs, [&tape, z, Hv, Bv, Av, half_width, N, C, hw](std::span<const double> g) {
    const Tensor& Z = tape.value(z.id());
    std::array<const Tensor*, 4> Ht, Bt;
    std::array<const Tensor*, 3> At;
    for (int k = 0; k < kDepth; ++k) {
      Ht[k] = &tape.value(Hv[k].id());
      Bt[k] = &tape.value(Bv[k].id());
      if (k < kDepth - 1) At[k] = &tape.value(Av[k].id());
    }
    auto gz = tape.grad_buffer(z.id());
    std::array<std::span<double>, kDepth> gH, gB;
    std::array<std::span<double>, kDepth - 1> gA;
    for (int k = 0; k < kDepth; ++k) {
      gH[k] = tape.grad_buffer(Hv[k].id());
      gB[k] = tape.grad_buffer(Bv[k].id());
      if (k < kDepth - 1) gA[k] = tape.grad_buffer(Av[k].id());
    }
    for (int c = 0; c < C; ++c) {
      const Chain ch = make_chain(c, Ht, Bt, At);
      Chain::Grads grads;
      for (int k = 0; k < kDepth; ++k) {
        grads.H[k].assign(layer_size(k), 0.0);
        grads.b[k].assign(Chain::widths[k + 1], 0.0);
        if (k < kDepth - 1) grads.a[k].assign(Chain::widths[k + 1], 0.0);
      }
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + i;
          if (g[idx] == 0.0) continue;
          Chain::Trace tu, tl;
          const double u = ch.eval(Z[idx] + half_width, &tu);
          const double l = ch.eval(Z[idx] - half_width, &tl);
          const BinEval be = bin_from_logits(u, l);
          const double dx = ch.backward(tu, g[idx] * be.dp_du, &grads) + ch.backward(tl, g[idx] * be.dp_dl, &grads);
          if (!gz.empty()) gz[idx] += dx;
        }
      for (int k = 0; k < kDepth; ++k) {
        const std::size_t n = layer_size(k), out = Chain::widths[k + 1];
        if (!gH[k].empty())
          for (std::size_t i = 0; i < n; ++i) gH[k][c * n + i] += grads.H[k][i];
        if (!gB[k].empty())
          for (std::size_t i = 0; i < out; ++i) gB[k][c * out + i] += grads.b[k][i];
        if (k < kDepth - 1 && !gA[k].empty())
          for (std::size_t i = 0; i < out; ++i) gA[k][c * out + i] += grads.a[k][i];
      }
    }
  });
}

FrequencyTable FactorizedPrior::table(int c, double step) const {
  constexpr std::int64_t kCap = 4096;
  constexpr double kTail = 1e-9;
  if (c < 0 || c >= channels_) throw IndexError("factorized prior: channel out of range");
  const Chain ch = make_chain(c, {matrices_[0], matrices_[1], matrices_[2], matrices_[3]},
                              {biases_[0], biases_[1], biases_[2], biases_[3]},
                              {factors_[0], factors_[1], factors_[2]});
  const double h = 0.5 * step;
  // Lower end: smallest k whose upper bin edge has CDF >= tail.
  std::int64_t lo = -kCap, hi = kCap;
  {
    std::int64_t a = -kCap, b = kCap;
    while (a < b) {
      const std::int64_t m = a + (b - a) / 2;
      if (math::sigmoid(ch.eval(m * step + h, nullptr)) >= kTail) b = m; else a = m + 1;
    }
    lo = a;
  }
  {
    std::int64_t a = lo, b = kCap;
    while (a < b) {
      const std::int64_t m = a + (b - a + 1) / 2;
      if (math::sigmoid(-ch.eval(m * step - h, nullptr)) >= kTail) a = m; else b = m - 1;
    }
    hi = a;
  }
  std::vector<double> probs(static_cast<std::size_t>(hi - lo + 2));
  double mass = 0.0;
  for (std::int64_t k = lo; k <= hi; ++k) {
    const double x = static_cast<double>(k) * step;
    const double p = bin_from_logits(ch.eval(x + h, nullptr), ch.eval(x - h, nullptr)).p;
    probs[static_cast<std::size_t>(k - lo)] = p;
    mass += p;
  }
  probs.back() = std::max(1.0 - mass, 0.0);
  return make_table(lo, probs);
}

// ---------------------------------------------------------------------------
// Space-channel context

Tensor anchor_mask(int H, int W) {
  Tensor m({1, 1, H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) m.at(0, 0, i, j) = (i + j) % 2 == 0 ? 1.0 : 0.0;
  return m;
}

Tensor nonanchor_mask(int H, int W) {
  Tensor m = anchor_mask(H, W);
  for (double& v : m.data()) v = 1.0 - v;
  return m;
}

ContextModel::ContextModel(ParameterStore& store, const std::string& name, const ContextConfig& config, Rng& rng)
    : config_(config) {
  if (config.groups < 1 || config.latent_channels % config.groups != 0) {
    throw ShapeError("context model: groups must divide latent channels");
  }
  const int gc = group_channels();
  const int ctx = 2 * gc;
  for (int g = 0; g < config.groups; ++g) {
    const std::string p = name + ".g" + std::to_string(g);
    int in = config.hyper_channels;
    if (!config.hyper_only) {
      ConvSpec s{.in_channels = gc, .out_channels = ctx, .kernel_h = 5, .kernel_w = 5};
      spatial_.emplace_back(store, p + ".spatial", s.same_padding(), rng);
      in += ctx;
      if (g > 0) {
        ConvSpec c{.in_channels = g * gc, .out_channels = ctx, .kernel_h = 3, .kernel_w = 3};
        channel_.emplace_back(store, p + ".channel", c.same_padding(), rng);
        in += ctx;
      } else {
        channel_.emplace_back();
      }
    }
    const int hid = 4 * gc;
    hidden_.emplace_back(store, p + ".hidden", ConvSpec{.in_channels = in, .out_channels = hid}, rng);
    output_.emplace_back(store, p + ".out", ConvSpec{.in_channels = hid, .out_channels = 2 * gc}, rng);
  }
}

GaussianParams ContextModel::predict_group(Var hyper, Var y, int g) const {
  if (g < 0 || g >= config_.groups) throw IndexError("context model: group out of range");
  const int gc = group_channels();
  if (y.dim(1) != config_.latent_channels || hyper.dim(1) != config_.hyper_channels ||
      y.dim(2) != hyper.dim(2) || y.dim(3) != hyper.dim(3)) {
    throw ShapeError("context model: latent " + to_string(y.shape()) + " and hyper " +
                     to_string(hyper.shape()) + " do not match the configuration");
  }
  std::vector<Var> parts{hyper};
  if (!config_.hyper_only) {
    const int H = y.dim(2), W = y.dim(3);
    const Var own = slice_channels(y, g * gc, (g + 1) * gc);
    parts.push_back(select_mask(spatial_[g](select_mask(own, anchor_mask(H, W))), nonanchor_mask(H, W)));
    if (g > 0) parts.push_back(channel_[g](slice_channels(y, 0, g * gc)));
  }
  const Var out = output_[g](gelu(hidden_[g](parts.size() == 1 ? parts[0] : concat(parts))));
  return {slice_channels(out, 0, gc), scale_from_raw(slice_channels(out, gc, 2 * gc))};
}

GaussianParams ContextModel::predict(Var hyper, Var y) const {
  std::vector<Var> mus, sigmas;
  for (int g = 0; g < config_.groups; ++g) {
    auto p = predict_group(hyper, y, g);
    mus.push_back(p.mu);
    sigmas.push_back(p.sigma);
  }
  if (config_.groups == 1) return {mus[0], sigmas[0]};
  return {concat(mus), concat(sigmas)};
}

}  // namespace lfc
