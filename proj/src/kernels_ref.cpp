#include "adsy/kernels_ref.hpp"

namespace adsy::ref {

template <typename T>
void mm_nn(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void conv2d_forward(T* y, const T* x, const T* w, const T* bias, std::int64_t n, std::int64_t c,
                    std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                    std::int64_t kw, int stride, int pad) {
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t fi = 0; fi < f; ++fi)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T acc = bias ? bias[fi] : T(0);
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t iy = oy * stride - pad + ky;
                const std::int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x[((ni * c + ci) * h + iy) * wd + ix] *
                       w[((fi * c + ci) * kh + ky) * kw + kx];
              }
          y[((ni * f + fi) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void conv2d_backward_input(T* dx, const T* dy, const T* w, std::int64_t n, std::int64_t c,
                           std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                           std::int64_t kw, int stride, int pad) {
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t fi = 0; fi < f; ++fi)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const T g = dy[((ni * f + fi) * oh + oy) * ow + ox];
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t iy = oy * stride - pad + ky;
                const std::int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                dx[((ni * c + ci) * h + iy) * wd + ix] +=
                    g * w[((fi * c + ci) * kh + ky) * kw + kx];
              }
        }
}

template <typename T>
void conv2d_backward_weights(T* dw, T* dbias, const T* dy, const T* x, std::int64_t n,
                             std::int64_t c, std::int64_t h, std::int64_t wd, std::int64_t f,
                             std::int64_t kh, std::int64_t kw, int stride, int pad) {
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t fi = 0; fi < f; ++fi)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const T g = dy[((ni * f + fi) * oh + oy) * ow + ox];
          if (dbias) dbias[fi] += g;
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t iy = oy * stride - pad + ky;
                const std::int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                dw[((fi * c + ci) * kh + ky) * kw + kx] +=
                    g * x[((ni * c + ci) * h + iy) * wd + ix];
              }
        }
}

#define ADSY_REF_INSTANTIATE(T)                                                                  \
  template void mm_nn<T>(T*, const T*, const T*, std::int64_t, std::int64_t, std::int64_t);      \
  template void conv2d_forward<T>(T*, const T*, const T*, const T*, std::int64_t, std::int64_t,  \
                                  std::int64_t, std::int64_t, std::int64_t, std::int64_t,        \
                                  std::int64_t, int, int);                                       \
  template void conv2d_backward_input<T>(T*, const T*, const T*, std::int64_t, std::int64_t,     \
                                         std::int64_t, std::int64_t, std::int64_t, std::int64_t, \
                                         std::int64_t, int, int);                                \
  template void conv2d_backward_weights<T>(T*, T*, const T*, const T*, std::int64_t,             \
                                           std::int64_t, std::int64_t, std::int64_t,             \
                                           std::int64_t, std::int64_t, std::int64_t, int, int);

ADSY_REF_INSTANTIATE(float)
ADSY_REF_INSTANTIATE(double)
#undef ADSY_REF_INSTANTIATE

}  // namespace adsy::ref
