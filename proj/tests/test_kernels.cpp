#include <doctest.h>
#include <array>

#include <cmath>
#include <vector>

#include "adsy/kernels.hpp"
#include "adsy/kernels_ref.hpp"
#include "adsy/rng.hpp"
#include "adsy/tensor.hpp"

using namespace adsy;

namespace {

template <typename T>
std::vector<T> random_vec(std::int64_t n, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

TEST_CASE("matmul matches serial reference") {
  Rng rng(11);
  for (auto [m, k, n] : {std::array<std::int64_t, 3>{7, 5, 9},
                         std::array<std::int64_t, 3>{1, 16, 1},
                         std::array<std::int64_t, 3>{33, 17, 21}}) {
    auto a = random_vec<double>(m * k, rng);
    auto b = random_vec<double>(k * n, rng);
    std::vector<double> c1(static_cast<std::size_t>(m * n)), c2(static_cast<std::size_t>(m * n));
    kern::mm_nn(c1.data(), a.data(), b.data(), m, k, n);
    ref::mm_nn(c2.data(), a.data(), b.data(), m, k, n);
    CHECK(max_abs_diff(c1, c2) <= 1e-12);
  }
}

TEST_CASE("mm_nt and mm_tn agree with explicit transposition") {
  Rng rng(12);
  const std::int64_t m = 6, k = 4, n = 5;
  auto a = random_vec<double>(m * k, rng);
  auto bt = random_vec<double>(n * k, rng);  // [N,K]
  // build B = bt^T as [K,N]
  std::vector<double> b(static_cast<std::size_t>(k * n));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < k; ++j) b[static_cast<std::size_t>(j * n + i)] = bt[static_cast<std::size_t>(i * k + j)];
  std::vector<double> c1(static_cast<std::size_t>(m * n)), c2(static_cast<std::size_t>(m * n));
  kern::mm_nt(c1.data(), a.data(), bt.data(), m, k, n);
  ref::mm_nn(c2.data(), a.data(), b.data(), m, k, n);
  CHECK(max_abs_diff(c1, c2) <= 1e-12);

  // mm_tn: c = a^T * b with a [K,M]
  auto at = random_vec<double>(k * m, rng);
  std::vector<double> a2(static_cast<std::size_t>(m * k));
  for (std::int64_t i = 0; i < k; ++i)
    for (std::int64_t j = 0; j < m; ++j) a2[static_cast<std::size_t>(j * k + i)] = at[static_cast<std::size_t>(i * m + j)];
  std::vector<double> c3(static_cast<std::size_t>(m * n)), c4(static_cast<std::size_t>(m * n));
  kern::mm_tn(c3.data(), at.data(), b.data(), m, k, n);
  ref::mm_nn(c4.data(), a2.data(), b.data(), m, k, n);
  CHECK(max_abs_diff(c3, c4) <= 1e-12);
}

TEST_CASE("conv2d forward matches naive quadruple-loop oracle on random batches") {
  Rng rng(13);
  // random 5-instance batch, 64-bit, tolerance 1e-10
  const std::int64_t n = 5, c = 3, h = 12, w = 10, f = 4, kk = 4;
  const int stride = 2, pad = 1;
  auto x = random_vec<double>(n * c * h * w, rng);
  auto wt = random_vec<double>(f * c * kk * kk, rng);
  auto bias = random_vec<double>(f, rng);
  const std::int64_t oh = (h + 2 * pad - kk) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kk) / stride + 1;
  std::vector<double> y1(static_cast<std::size_t>(n * f * oh * ow));
  std::vector<double> y2(static_cast<std::size_t>(n * f * oh * ow));
  kern::conv2d_forward(y1.data(), x.data(), wt.data(), bias.data(), n, c, h, w, f, kk, kk, stride, pad);
  ref::conv2d_forward(y2.data(), x.data(), wt.data(), bias.data(), n, c, h, w, f, kk, kk, stride, pad);
  CHECK(max_abs_diff(y1, y2) <= 1e-10);
}

TEST_CASE("conv2d backward kernels match serial reference") {
  Rng rng(14);
  const std::int64_t n = 2, c = 3, h = 8, w = 8, f = 5, kk = 4;
  const int stride = 2, pad = 1;
  const std::int64_t oh = (h + 2 * pad - kk) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kk) / stride + 1;
  auto x = random_vec<double>(n * c * h * w, rng);
  auto wt = random_vec<double>(f * c * kk * kk, rng);
  auto dy = random_vec<double>(n * f * oh * ow, rng);

  std::vector<double> dx1(static_cast<std::size_t>(n * c * h * w), 0.0), dx2 = dx1;
  kern::conv2d_backward_input(dx1.data(), dy.data(), wt.data(), n, c, h, w, f, kk, kk, stride, pad);
  ref::conv2d_backward_input(dx2.data(), dy.data(), wt.data(), n, c, h, w, f, kk, kk, stride, pad);
  CHECK(max_abs_diff(dx1, dx2) <= 1e-10);

  std::vector<double> dw1(static_cast<std::size_t>(f * c * kk * kk), 0.0), dw2 = dw1;
  std::vector<double> db1(static_cast<std::size_t>(f), 0.0), db2 = db1;
  kern::conv2d_backward_weights(dw1.data(), db1.data(), dy.data(), x.data(), n, c, h, w, f, kk, kk, stride, pad);
  ref::conv2d_backward_weights(dw2.data(), db2.data(), dy.data(), x.data(), n, c, h, w, f, kk, kk, stride, pad);
  CHECK(max_abs_diff(dw1, dw2) <= 1e-10);
  CHECK(max_abs_diff(db1, db2) <= 1e-10);
}

TEST_CASE("conv2d of all-ones counts overlapped cells") {
  // 4x4 input, 4x4 kernel of ones, stride 2, pad 1: every 2x2 output window
  // overlaps a 3x3 block of valid cells -> all outputs are 9 (enumerated by
  // the reference oracle).
  const std::int64_t h = 4;
  std::vector<double> x(static_cast<std::size_t>(h * h), 1.0);
  std::vector<double> w(16, 1.0);
  std::vector<double> y(4);
  ref::conv2d_forward(y.data(), x.data(), w.data(), static_cast<const double*>(nullptr), 1, 1, h, h, 1, 4, 4, 2, 1);
  for (double v : y) CHECK(v == doctest::Approx(9.0));
  std::vector<double> y2(4);
  kern::conv2d_forward(y2.data(), x.data(), w.data(), static_cast<const double*>(nullptr), 1, 1, h, h, 1, 4, 4, 2, 1);
  CHECK(max_abs_diff(y, y2) == 0.0);

  // 6x6 input: interior windows overlap 3x4 / 4x4 blocks -> 9,12,9 / 12,16,12
  // / 9,12,9 row pattern.
  std::vector<double> x6(36, 1.0);
  std::vector<double> y6(9);
  ref::conv2d_forward(y6.data(), x6.data(), w.data(), static_cast<const double*>(nullptr), 1, 1, 6, 6, 1, 4, 4, 2, 1);
  const std::vector<double> expected{9, 12, 9, 12, 16, 12, 9, 12, 9};
  CHECK(max_abs_diff(y6, expected) == 0.0);
}

TEST_CASE("all-zero input conv produces bias everywhere") {
  std::vector<double> x(static_cast<std::size_t>(1 * 2 * 6 * 6), 0.0);
  std::vector<double> w(static_cast<std::size_t>(3 * 2 * 4 * 4), 0.7);
  std::vector<double> bias{0.5, -1.5, 2.0};
  std::vector<double> y(static_cast<std::size_t>(3 * 9));
  kern::conv2d_forward(y.data(), x.data(), w.data(), bias.data(), 1, 2, 6, 6, 3, 4, 4, 2, 1);
  for (std::int64_t fi = 0; fi < 3; ++fi)
    for (std::int64_t i = 0; i < 9; ++i)
      CHECK(y[static_cast<std::size_t>(fi * 9 + i)] == doctest::Approx(bias[static_cast<std::size_t>(fi)]));
}
