// Times the OpenMP kernels against the serial reference implementations and
// verifies they agree on the benchmarked inputs. Run with no arguments for
// the default sizes, or pass `--quick` for a fast smoke pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include <omp.h>

#include "adsy/kernels.hpp"
#include "adsy/kernels_ref.hpp"
#include "adsy/rng.hpp"

using adsy::Rng;

namespace {

std::vector<float> random_vec(std::int64_t n, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max<double>(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  const int reps = quick ? 2 : 5;
  Rng rng(1234);

  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-34s %10s %10s %8s %10s\n", "kernel", "serial(s)", "openmp(s)", "speedup", "maxdiff");

  {
    const std::int64_t m = quick ? 96 : 384, k = quick ? 96 : 384, n = quick ? 96 : 384;
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    std::vector<float> c1(static_cast<std::size_t>(m * n)), c2 = c1;
    const double ts = time_best_of(reps, [&] { adsy::ref::mm_nn(c1.data(), a.data(), b.data(), m, k, n); });
    const double tp = time_best_of(reps, [&] { adsy::kern::mm_nn(c2.data(), a.data(), b.data(), m, k, n); });
    std::printf("%-34s %10.4f %10.4f %7.2fx %10.2e\n", "matmul", ts, tp, ts / tp, max_diff(c1, c2));
  }

  {
    // the encoder's heaviest layer shape
    const std::int64_t n = quick ? 8 : 64, c = 16, h = 16, w = 16, f = 32;
    auto x = random_vec(n * c * h * w, rng);
    auto wt = random_vec(f * c * 4 * 4, rng);
    const std::int64_t oh = (h + 2 - 4) / 2 + 1, ow = (w + 2 - 4) / 2 + 1;
    std::vector<float> y1(static_cast<std::size_t>(n * f * oh * ow)), y2 = y1;
    const double ts = time_best_of(
        reps, [&] { adsy::ref::conv2d_forward(y1.data(), x.data(), wt.data(), static_cast<const float*>(nullptr), n, c, h, w, f, 4, 4, 2, 1); });
    const double tp = time_best_of(
        reps, [&] { adsy::kern::conv2d_forward(y2.data(), x.data(), wt.data(), static_cast<const float*>(nullptr), n, c, h, w, f, 4, 4, 2, 1); });
    std::printf("%-34s %10.4f %10.4f %7.2fx %10.2e\n", "conv2d fwd 16c->32f 16x16", ts, tp, ts / tp,
                max_diff(y1, y2));

    std::vector<float> dy = random_vec(n * f * oh * ow, rng);
    std::vector<float> dx1(static_cast<std::size_t>(n * c * h * w)), dx2 = dx1;
    const double tsb = time_best_of(reps, [&] {
      std::fill(dx1.begin(), dx1.end(), 0.f);
      adsy::ref::conv2d_backward_input(dx1.data(), dy.data(), wt.data(), n, c, h, w, f, 4, 4, 2, 1);
    });
    const double tpb = time_best_of(reps, [&] {
      std::fill(dx2.begin(), dx2.end(), 0.f);
      adsy::kern::conv2d_backward_input(dx2.data(), dy.data(), wt.data(), n, c, h, w, f, 4, 4, 2, 1);
    });
    std::printf("%-34s %10.4f %10.4f %7.2fx %10.2e\n", "conv2d bwd-input", tsb, tpb, tsb / tpb,
                max_diff(dx1, dx2));

    std::vector<float> dw1(static_cast<std::size_t>(f * c * 4 * 4)), dw2 = dw1;
    const double tsw = time_best_of(reps, [&] {
      std::fill(dw1.begin(), dw1.end(), 0.f);
      adsy::ref::conv2d_backward_weights(dw1.data(), static_cast<float*>(nullptr), dy.data(), x.data(), n, c, h, w, f, 4, 4, 2, 1);
    });
    const double tpw = time_best_of(reps, [&] {
      std::fill(dw2.begin(), dw2.end(), 0.f);
      adsy::kern::conv2d_backward_weights(dw2.data(), static_cast<float*>(nullptr), dy.data(), x.data(), n, c, h, w, f, 4, 4, 2, 1);
    });
    std::printf("%-34s %10.4f %10.4f %7.2fx %10.2e\n", "conv2d bwd-weights", tsw, tpw, tsw / tpw,
                max_diff(dw1, dw2));
  }

  return 0;
}
