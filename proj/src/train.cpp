#include "lfc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "lfc/errors.hpp"
#include "lfc/metrics.hpp"

namespace lfc {

RdTerms rd_loss(Var x, Var x_hat, Var bits, double lambda, double num_samples) {
  if (!(lambda >= 0.0)) throw ParameterError("rd_loss: lambda must be >= 0");
  if (!(num_samples > 0.0)) throw ParameterError("rd_loss: sample count must be positive");
  RdTerms t;
  t.D = mse(x_hat, x);
  t.R = scale(bits, 1.0 / num_samples);
  t.J = add(t.D, scale(t.R, lambda));
  return t;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(ParameterStore& store, double lr) : store_(store), lr_(lr) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.tensor(i).size(), 0.0);
    v_.emplace_back(store.tensor(i).size(), 0.0);
  }
}

void Adam::step() {
  if (m_.size() != store_.size()) throw StateError("adam: parameter set changed after construction");
  for (std::size_t i = 0; i < store_.size(); ++i) {
    for (double g : store_.tensor(i).grad()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in " + store_.name(i));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store_.size(); ++i) {
    Tensor& p = store_.tensor(i);
    const auto g = std::as_const(p).grad();
    if (g.empty()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
    }
  }
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i)
    for (double g : std::as_const(store.tensor(i)).grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < store.size(); ++i)
      for (double& g : store.tensor(i).grad()) g *= s;
  }
  return norm;
}

PlateauSchedule::PlateauSchedule(double lr, double factor, int patience, double min_lr)
    : lr_(lr), factor_(factor), min_lr_(min_lr), patience_(patience) {
  if (!(factor > 0.0 && factor < 1.0) || patience < 1 || min_lr < 0.0) {
    throw ParameterError("plateau schedule: invalid factor, patience or min_lr");
  }
}

double PlateauSchedule::update(double metric) {
  if (!has_best_ || metric < best_) {
    best_ = metric;
    has_best_ = true;
    bad_ = 0;
  } else if (++bad_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    bad_ = 0;
  }
  return lr_;
}

// ---------------------------------------------------------------------------
// Synthetic light fields

namespace {

// Base texture on an integer grid: a few oriented sinusoids plus soft
// blobs, rescaled to [0.05, 0.95].
std::vector<double> base_texture(int rows, int cols, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(rows) * cols, 0.0);
  const int waves = 4;
  for (int k = 0; k < waves; ++k) {
    const double theta = unif(rng) * std::numbers::pi;
    const double freq = 0.15 + 0.6 * unif(rng);
    const double phase = unif(rng) * 2.0 * std::numbers::pi;
    const double amp = 0.5 + unif(rng);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        t[static_cast<std::size_t>(i) * cols + j] +=
            amp * std::sin(freq * (i * std::cos(theta) + j * std::sin(theta)) + phase);
  }
  const int blobs = 6;
  for (int k = 0; k < blobs; ++k) {
    const double ci = unif(rng) * rows, cj = unif(rng) * cols;
    const double r = 2.0 + 6.0 * unif(rng);
    const double amp = 4.0 * (unif(rng) - 0.5);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
        t[static_cast<std::size_t>(i) * cols + j] += amp * std::exp(-d2 / (2 * r * r));
      }
  }
  const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
  const double a = *lo, b = *hi;
  for (double& v : t) v = 0.05 + 0.9 * (b > a ? (v - a) / (b - a) : 0.5);
  return t;
}

double bilinear(const std::vector<double>& t, int cols, double r, double c) {
  const double fr = std::floor(r), fc = std::floor(c);
  const int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
  const double ar = r - fr, ac = c - fc;
  auto at = [&](int i, int j) { return t[static_cast<std::size_t>(i) * cols + j]; };
  // Weights of exactly 0 or 1 reproduce the grid value bit-exactly.
  const double row0 = at(r0, c0) * (1 - ac) + at(r0, c0 + 1) * ac;
  const double row1 = at(r0 + 1, c0) * (1 - ac) + at(r0 + 1, c0 + 1) * ac;
  return row0 * (1 - ar) + row1 * ar;
}

}  // namespace

LightField4D synth_lf(int A, int H, int W, double disparity, std::uint64_t seed, int channels) {
  if (A < 1 || H < 1 || W < 1 || channels < 1) throw ShapeError("synth_lf: extents must be >= 1");
  const int margin = static_cast<int>(std::ceil(std::abs(disparity) * (A - 1))) + 2;
  const int rows = H + 2 * margin, cols = W + 2 * margin;
  Rng rng(seed);
  LightField4D lf(channels, A, A, H, W);
  for (int c = 0; c < channels; ++c) {
    const auto tex = base_texture(rows, cols, rng);
    for (int u = 0; u < A; ++u)
      for (int v = 0; v < A; ++v)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            lf.at(c, u, v, h, w) = bilinear(tex, cols, margin + h + disparity * u, margin + w + disparity * v);
  }
  return lf;
}

std::vector<LightField4D> synth_dataset(int n, int A, int H, int W, std::uint64_t seed, int channels) {
  if (n < 1) throw ParameterError("synth_dataset: n must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> disp(-1.5, 1.5);
  std::vector<LightField4D> out;
  for (int i = 0; i < n; ++i) {
    const double d = disp(rng);
    out.push_back(synth_lf(A, H, W, d, rng(), channels));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train_toy(CodecModel& model, const std::vector<LightField4D>& dataset, const TrainOptions& opt) {
  if (dataset.empty()) throw ParameterError("train: empty dataset");
  if (opt.batch < 1 || opt.steps < 1) throw ParameterError("train: batch and steps must be >= 1");
  const CodecConfig& cfg = model.config();
  std::vector<Tensor> samples;
  for (const auto& lf : dataset) {
    if (lf.U() != cfg.A || lf.V() != cfg.A || lf.channels() != cfg.channels) {
      throw ShapeError("train: dataset field does not match the model configuration");
    }
    samples.push_back(lf_to_tensor(pad_lf(lf, kPadMultiple).first));
    if (samples.back().shape() != samples.front().shape()) throw ShapeError("train: dataset fields differ in shape");
  }
  const Shape one = samples.front().shape();
  const std::size_t per = samples.front().size();
  const double lf_samples = static_cast<double>(cfg.A) * cfg.A * dataset.front().H() * dataset.front().W();

  model.set_lambda(opt.lambda);
  Rng rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  Adam adam(model.parameters(), opt.lr);
  PlateauSchedule plateau(opt.lr);
  TrainResult result;
  double window_sum = 0.0;
  int window_n = 0;

  for (long step = 0; step < opt.steps; ++step) {
    Tensor batch({opt.batch, one[1], one[2], one[3]});
    for (int b = 0; b < opt.batch; ++b) {
      const Tensor& s = samples[pick(rng)];
      std::copy(s.values().begin(), s.values().end(), batch.values().begin() + b * per);
    }
    model.parameters().zero_grad();
    Tape tape;
    const Var x = tape.constant(std::move(batch));
    const auto f = model.forward(x, QuantMode::noise, &rng);
    const RdTerms t = rd_loss(x, f.x_hat, add(f.y_bits, f.z_bits), opt.lambda, opt.batch * lf_samples);
    TraceRow row{step, t.J.value()[0], t.D.value()[0], t.R.value()[0], adam.lr()};
    result.trace.push_back(row);
    if (opt.on_step) opt.on_step(row);
    if (step == 0) result.initial_J = row.J;
    if (!std::isfinite(row.J) || row.J > 1e3 * result.initial_J) {
      result.diverged = true;
      break;
    }
    tape.backward(t.J);
    clip_grad_norm(model.parameters(), opt.clip_norm);
    adam.step();
    window_sum += row.J;
    if (++window_n == opt.plateau_window) {
      adam.set_lr(plateau.update(window_sum / window_n));
      window_sum = 0.0;
      window_n = 0;
    }
  }
  const std::size_t tail = std::max<std::size_t>(1, result.trace.size() / 10);
  double s = 0.0;
  for (std::size_t i = result.trace.size() - tail; i < result.trace.size(); ++i) s += result.trace[i].J;
  result.final_J = s / static_cast<double>(tail);
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "step,J,D,R_bpp,lr\n";
  out.precision(10);
  for (const auto& r : trace) out << r.step << ',' << r.J << ',' << r.D << ',' << r.R_bpp << ',' << r.lr << '\n';
}

RdEvaluation evaluate_rd(const CodecModel& model, const std::vector<LightField4D>& fields) {
  RdEvaluation e;
  if (fields.empty()) return e;
  double psnr_sum = 0.0;
  for (const auto& lf : fields) {
    const EncodeResult enc = encode_lf(lf, model);
    const DecodeResult dec = decode_lf(enc.bytes, model);
    e.bpp += enc.bpp;
    const PsnrResult p = psnr(lf, dec.lf, lf.range().hi - lf.range().lo);
    if (p.lossless) ++e.lossless;
    psnr_sum += p.db;
  }
  e.bpp /= static_cast<double>(fields.size());
  e.psnr = psnr_sum / static_cast<double>(fields.size());
  return e;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int worker_threads() {
  const char* env = std::getenv("LFCODEC_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  return end != env && *end == '\0' && v >= 1 && v <= 256 ? static_cast<int>(v) : 1;
}

}  // namespace lfc
