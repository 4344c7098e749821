#pragma once

#include <functional>
#include <string>

#include "adsy/layers.hpp"

namespace adsy {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Evaluates the computation on the parameters' current values. When
// with_grad is true the callee must zero the grads, run backward, and leave
// gradients in the ParamSet; the return value is the scalar loss either way.
// The computation must be deterministic across calls (fix any sampled noise
// up front).
using GradCheckLoss = std::function<double(bool with_grad)>;

// Central-difference comparison of reverse-mode gradients on randomly sampled
// coordinates (64-bit only; finite differences are meaningless at 32-bit).
// The relative-error denominator is max(|analytic|, |numeric|,
// 1e-3 * ||grad||_inf of the parameter, 1e-6): finite-difference roundoff is
// absolute (~|f| * eps / h), so coordinates far below the parameter's
// gradient scale are compared at that scale instead of their own magnitude.
// A genuinely wrong gradient still shows up at O(1) relative error.
GradCheckReport gradient_check(ParamSet<double>& params, const GradCheckLoss& loss,
                               int samples_per_param, double h, std::uint64_t seed);

}  // namespace adsy
