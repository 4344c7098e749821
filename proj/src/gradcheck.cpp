#include "adsy/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "adsy/rng.hpp"

namespace adsy {

GradCheckReport gradient_check(ParamSet<double>& params, const GradCheckLoss& loss,
                               int samples_per_param, double h, std::uint64_t seed) {
  GradCheckReport report;
  Rng rng(seed);

  const auto buffers = params.snapshot_buffers();
  params.zero_grad();
  loss(true);
  std::vector<Tensor<double>> analytic;
  for (std::size_t i = 0; i < params.param_count(); ++i) analytic.push_back(params.param(i).grad);

  for (std::size_t pi = 0; pi < params.param_count(); ++pi) {
    Parameter<double>& p = params.param(pi);
    const std::int64_t n = p.value.numel();
    double gmax = 0.0;
    for (std::int64_t i = 0; i < n; ++i) gmax = std::max(gmax, std::abs(analytic[pi][i]));
    const double floor = std::max(1e-3 * gmax, 1e-6);
    const int samples = static_cast<int>(std::min<std::int64_t>(samples_per_param, n));
    for (int s = 0; s < samples; ++s) {
      const std::int64_t i = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      const double x0 = p.value[i];
      params.restore_buffers(buffers);
      p.value[i] = x0 + h;
      const double fp = loss(false);
      params.restore_buffers(buffers);
      p.value[i] = x0 - h;
      const double fm = loss(false);
      p.value[i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[pi][i];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_analytic = ad;
        report.worst_numeric = fd;
      }
    }
  }
  params.restore_buffers(buffers);
  return report;
}

}  // namespace adsy
