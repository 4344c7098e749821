#pragma once

#include <functional>
#include <vector>

#include "adsy/autodiff.hpp"
#include "adsy/rng.hpp"
#include "adsy/tensor.hpp"

namespace adsy::test {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central-difference check of a tape computation against its reverse-mode
// gradients, sampling coordinates of every input. Returns the max relative
// error with the same scale-aware denominator gradient_check uses:
// max(|ad|, |fd|, 1e-3 * ||grad||_inf per input, 1e-6).
using BuildFn = std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>;

inline double op_gradcheck(std::vector<Tensor<double>> inputs, const BuildFn& build,
                           std::uint64_t seed, int samples_per_input = 40, double h = 1e-5) {
  auto eval = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    for (auto& in : inputs) ids.push_back(tape.input(in, true));
    const auto loss = build(tape, ids);
    const double value = tape.val(loss)[0];
    if (with_grad) {
      tape.backward(loss);
      grads->clear();
      for (auto id : ids) grads->push_back(tape.grad(id));
    }
    return value;
  };

  std::vector<Tensor<double>> grads;
  eval(true, &grads);

  Rng rng(seed);
  double max_rel = 0.0;
  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    const std::int64_t n = inputs[ii].numel();
    double gmax = 0.0;
    for (std::int64_t i = 0; i < n; ++i) gmax = std::max(gmax, std::abs(grads[ii][i]));
    const double floor = std::max(1e-3 * gmax, 1e-6);
    const int samples = static_cast<int>(std::min<std::int64_t>(samples_per_input, n));
    for (int s = 0; s < samples; ++s) {
      const std::int64_t ci = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      const double x0 = inputs[ii][ci];
      inputs[ii][ci] = x0 + h;
      const double fp = eval(false, nullptr);
      inputs[ii][ci] = x0 - h;
      const double fm = eval(false, nullptr);
      inputs[ii][ci] = x0;
      const double fd = (fp - fm) / (2 * h);
      const double ad = grads[ii][ci];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace adsy::test
