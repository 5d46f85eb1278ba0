#pragma once

// Rate-distortion training at desk scale: J = MSE + lambda * bits / samples.

#include <functional>
#include <ostream>
#include <vector>

#include "lfc/codec.hpp"

namespace lfc {

struct RdTerms {
  Var J;
  Var D;
  Var R;  // bits per sample
};

// J = mse(x, x_hat) + lambda * bits / num_samples. Throws ParameterError for
// negative lambda or non-positive sample count.
RdTerms rd_loss(Var x, Var x_hat, Var bits, double lambda, double num_samples);

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Adam(ParameterStore& store, double lr);

  // Applies one update from the accumulated gradients. Throws NumericError
  // (naming the parameter) on a non-finite gradient; nothing is updated then.
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParameterStore& store_;
  double lr_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

// Reduce-on-plateau: after `patience` consecutive evaluations without a
// strict improvement on the best value, lr <- max(lr * factor, min_lr).
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor = 0.5, int patience = 20, double min_lr = 1e-6);
  double update(double metric);
  double lr() const { return lr_; }

 private:
  double lr_, factor_, min_lr_;
  int patience_;
  int bad_ = 0;
  bool has_best_ = false;
  double best_ = 0.0;
};

// Textured plane at disparity d: SAI(u, v) samples the base texture at
// (h + d*u, w + d*v) with bilinear interpolation. Values lie in [0, 1].
LightField4D synth_lf(int A, int H, int W, double disparity, std::uint64_t seed, int channels = 1);
// n fields with disparities drawn uniformly from [-1.5, 1.5].
std::vector<LightField4D> synth_dataset(int n, int A, int H, int W, std::uint64_t seed, int channels = 1);

struct TraceRow {
  long step = 0;
  double J = 0, D = 0, R_bpp = 0, lr = 0;
};

struct TrainOptions {
  long steps = 200;
  int batch = 4;
  double lr = 1e-4;
  double lambda = kLambdaLadder[0];
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  int plateau_window = 10;  // steps averaged per plateau evaluation
  std::function<void(const TraceRow&)> on_step;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  bool diverged = false;
  double initial_J = 0.0;
  double final_J = 0.0;  // mean over the last tenth of the run
};

// Trains in place. All fields must share one shape; they are padded to the
// codec's alignment. Deterministic for a given seed.
TrainResult train_toy(CodecModel& model, const std::vector<LightField4D>& dataset, const TrainOptions& options);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

struct RdEvaluation {
  double bpp = 0.0;   // mean over fields, from actual file sizes
  double psnr = 0.0;  // mean over fields
  int lossless = 0;
};
RdEvaluation evaluate_rd(const CodecModel& model, const std::vector<LightField4D>& fields);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);
// LFCODEC_THREADS, or 1 when unset or invalid.
int worker_threads();

}  // namespace lfc
