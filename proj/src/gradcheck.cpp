#include "lfc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "lfc/errors.hpp"
#include "lfc/ops.hpp"

namespace lfc {

namespace {

double scalar_of(Var v) {
  if (v.value().size() != 1) throw ShapeError("gradcheck: objective must be scalar");
  return v.value()[0];
}

std::vector<std::size_t> choose(std::size_t n, int max_entries, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_entries > 0 && static_cast<std::size_t>(max_entries) < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_entries));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

struct Sample {
  double analytic, numeric;
  std::string where;
};

// `scale` is the largest analytic magnitude over the whole gradient, not just
// the sampled entries, so the floor does not depend on which entries were drawn.
GradCheckResult summarize(const std::vector<Sample>& s, double scale, double floor_fraction) {
  GradCheckResult r;
  const double floor = std::max(floor_fraction * scale, 1e-300);
  for (const auto& e : s) {
    const double den = std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    const double err = std::abs(e.analytic - e.numeric) / den;
    ++r.checked;
    if (err > r.max_error || !std::isfinite(err)) {
      r.max_error = std::isfinite(err) ? err : INFINITY;
      r.worst = e.where + ": analytic " + std::to_string(e.analytic) + " numeric " + std::to_string(e.numeric);
    }
  }
  return r;
}

}  // namespace

GradCheckResult check_input_gradient(const InputObjective& f, const Tensor& x, const GradCheckOptions& opt) {
  std::vector<double> analytic;
  {
    Tape tape;
    const Var xv = tape.leaf(Tensor(x.shape(), x.values()));
    const Var out = f(tape, xv);
    scalar_of(out);
    tape.backward(out);
    const auto g = tape.grad(xv);
    analytic.assign(g.begin(), g.end());
    if (analytic.empty()) analytic.assign(x.size(), 0.0);
  }
  Rng rng(opt.seed);
  std::vector<Sample> samples;
  Tensor probe(x.shape(), x.values());
  for (std::size_t i : choose(x.size(), opt.max_entries, rng)) {
    const double orig = probe[i];
    auto eval = [&](double v) {
      probe[i] = v;
      Tape tape;
      tape.set_grad_enabled(false);
      return scalar_of(f(tape, tape.constant(Tensor(probe.shape(), probe.values()))));
    };
    const double fp = eval(orig + opt.step), fm = eval(orig - opt.step);
    probe[i] = orig;
    samples.push_back({analytic[i], (fp - fm) / (2.0 * opt.step), "input[" + std::to_string(i) + "]"});
  }
  double scale = 0.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  return summarize(samples, scale, opt.floor_fraction);
}

GradCheckResult check_parameter_gradient(const ParamObjective& f, ParameterStore& store, const GradCheckOptions& opt) {
  store.zero_grad();
  {
    Tape tape;
    const Var out = f(tape);
    scalar_of(out);
    tape.backward(out);
  }
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  double scale = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    for (std::size_t k = 0; k < store.tensor(p).size(); ++k) entries.emplace_back(p, k);
    for (double g : std::as_const(store.tensor(p)).grad()) scale = std::max(scale, std::abs(g));
  }
  Rng rng(opt.seed);
  std::vector<Sample> samples;
  for (std::size_t e : choose(entries.size(), opt.max_entries, rng)) {
    const auto [p, k] = entries[e];
    Tensor& t = store.tensor(p);
    const double analytic = std::as_const(t).grad().empty() ? 0.0 : std::as_const(t).grad()[k];
    const double orig = t[k];
    auto eval = [&](double v) {
      t[k] = v;
      Tape tape;
      tape.set_grad_enabled(false);
      return scalar_of(f(tape));
    };
    const double fp = eval(orig + opt.step), fm = eval(orig - opt.step);
    t[k] = orig;
    samples.push_back({analytic, (fp - fm) / (2.0 * opt.step), store.name(p) + "[" + std::to_string(k) + "]"});
  }
  store.zero_grad();
  return summarize(samples, scale, opt.floor_fraction);
}

Var random_projection(Var out, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor r(out.shape());
  for (double& v : r.data()) v = n(rng);
  return sum(mul(out, out.tape().constant(std::move(r))));
}

}  // namespace lfc
