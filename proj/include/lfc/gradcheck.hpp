#pragma once

// Central finite-difference checks of tape gradients.
//
// Entry error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
// with floor = floor_fraction * (largest analytic magnitude over the whole
// gradient, sampled or not), so entries far below the gradient's scale are
// judged against that scale instead of against their own rounding noise.

#include <functional>
#include <string>

#include "lfc/parameters.hpp"
#include "lfc/autograd.hpp"

namespace lfc {

struct GradCheckOptions {
  double step = 1e-5;
  double floor_fraction = 1e-5;
  int max_entries = 0;  // 0: every entry, otherwise a random sample
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_error = 0.0;
  int checked = 0;
  std::string worst;  // description of the worst entry
  bool passed(double tol) const { return max_error <= tol; }
};

// Scalar objective built from the given leaf on a fresh tape.
using InputObjective = std::function<Var(Tape&, Var)>;
// Scalar objective built from parameters bound on a fresh tape.
using ParamObjective = std::function<Var(Tape&)>;

// Gradient of f with respect to its input x.
GradCheckResult check_input_gradient(const InputObjective& f, const Tensor& x, const GradCheckOptions& opt = {});

// Gradient of f with respect to the parameters in `store` (values are
// perturbed in place and restored).
GradCheckResult check_parameter_gradient(const ParamObjective& f, ParameterStore& store,
                                         const GradCheckOptions& opt = {});

// sum(out * R) with R a fixed pseudo-random tensor of out's shape, turning
// any output into a scalar whose gradient reaches every element.
Var random_projection(Var out, std::uint64_t seed);

}  // namespace lfc
