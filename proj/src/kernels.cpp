#include "adsy/kernels.hpp"

namespace adsy::kern {

namespace {
inline std::int64_t out_extent(std::int64_t in, std::int64_t k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}
}  // namespace

template <typename T>
void mm_nn(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void mm_nt(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

template <typename T>
void mm_tn(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate) {
  // a is [K,M]; parallel over output rows, serial accumulation over K.
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void bmm(T* c, const T* a, const T* b, std::int64_t g, std::int64_t m, std::int64_t k,
         std::int64_t n, bool transpose_b) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t gi = 0; gi < g; ++gi) {
    for (std::int64_t i = 0; i < m; ++i) {
      const T* arow = a + (gi * m + i) * k;
      const T* bbase = b + gi * k * n;
      T* crow = c + (gi * m + i) * n;
      if (transpose_b) {
        for (std::int64_t j = 0; j < n; ++j) {
          const T* brow = bbase + j * k;
          T acc = T(0);
          for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
          crow[j] = acc;
        }
      } else {
        for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
        for (std::int64_t p = 0; p < k; ++p) {
          const T av = arow[p];
          const T* brow = bbase + p * n;
          for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(T* y, const T* x, const T* w, const T* bias, std::int64_t n, std::int64_t c,
                    std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                    std::int64_t kw, int stride, int pad) {
  const std::int64_t oh = out_extent(h, kh, stride, pad);
  const std::int64_t ow = out_extent(wd, kw, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t fi = 0; fi < f; ++fi) {
      const T* xn = x + ni * c * h * wd;
      const T* wf = w + fi * c * kh * kw;
      T* yp = y + (ni * f + fi) * oh * ow;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T acc = bias ? bias[fi] : T(0);
          const std::int64_t iy0 = oy * stride - pad;
          const std::int64_t ix0 = ox * stride - pad;
          for (std::int64_t ci = 0; ci < c; ++ci) {
            const T* xc = xn + ci * h * wd;
            const T* wc = wf + ci * kh * kw;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              const T* xrow = xc + iy * wd;
              const T* wrow = wc + ky * kw;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ix0 + kx;
                if (ix < 0 || ix >= wd) continue;
                acc += xrow[ix] * wrow[kx];
              }
            }
          }
          yp[oy * ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(T* dx, const T* dy, const T* w, std::int64_t n, std::int64_t c,
                           std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                           std::int64_t kw, int stride, int pad) {
  const std::int64_t oh = out_extent(h, kh, stride, pad);
  const std::int64_t ow = out_extent(wd, kw, stride, pad);
  // Gather form: each input element sums the output positions it fed, so no
  // concurrent writes and a fixed accumulation order. Only kernel taps with
  // ky ≡ iy+pad (mod stride) can contribute, so step by stride.
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      T* dxp = dx + (ni * c + ci) * h * wd;
      const T* dyn = dy + ni * f * oh * ow;
      for (std::int64_t iy = 0; iy < h; ++iy) {
        for (std::int64_t ix = 0; ix < wd; ++ix) {
          T acc = T(0);
          for (std::int64_t ky = (iy + pad) % stride; ky < kh; ky += stride) {
            const std::int64_t oy = (iy + pad - ky) / stride;
            if (iy + pad - ky < 0) break;
            if (oy >= oh) continue;
            for (std::int64_t kx = (ix + pad) % stride; kx < kw; kx += stride) {
              const std::int64_t ox = (ix + pad - kx) / stride;
              if (ix + pad - kx < 0) break;
              if (ox >= ow) continue;
              const T* dyp = dyn + oy * ow + ox;
              const T* wp = w + ci * kh * kw + ky * kw + kx;
              for (std::int64_t fi = 0; fi < f; ++fi)
                acc += dyp[fi * oh * ow] * wp[fi * c * kh * kw];
            }
          }
          dxp[iy * wd + ix] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(T* dw, T* dbias, const T* dy, const T* x, std::int64_t n,
                             std::int64_t c, std::int64_t h, std::int64_t wd, std::int64_t f,
                             std::int64_t kh, std::int64_t kw, int stride, int pad) {
  const std::int64_t oh = out_extent(h, kh, stride, pad);
  const std::int64_t ow = out_extent(wd, kw, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t fi = 0; fi < f; ++fi) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      T* dwp = dw + (fi * c + ci) * kh * kw;
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          T acc = T(0);
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* dyf = dy + (ni * f + fi) * oh * ow;
            const T* xc = x + (ni * c + ci) * h * wd;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                acc += dyf[oy * ow + ox] * xc[iy * wd + ix];
              }
            }
          }
          dwp[ky * kw + kx] += acc;
        }
      }
    }
  }
  if (dbias) {
#pragma omp parallel for schedule(static)
    for (std::int64_t fi = 0; fi < f; ++fi) {
      T acc = T(0);
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const T* dyf = dy + (ni * f + fi) * oh * ow;
        for (std::int64_t i = 0; i < oh * ow; ++i) acc += dyf[i];
      }
      dbias[fi] += acc;
    }
  }
}

#define ADSY_INSTANTIATE(T)                                                                       \
  template void mm_nn<T>(T*, const T*, const T*, std::int64_t, std::int64_t, std::int64_t, bool); \
  template void mm_nt<T>(T*, const T*, const T*, std::int64_t, std::int64_t, std::int64_t, bool); \
  template void mm_tn<T>(T*, const T*, const T*, std::int64_t, std::int64_t, std::int64_t, bool); \
  template void bmm<T>(T*, const T*, const T*, std::int64_t, std::int64_t, std::int64_t,          \
                       std::int64_t, bool);                                                       \
  template void conv2d_forward<T>(T*, const T*, const T*, const T*, std::int64_t, std::int64_t,   \
                                  std::int64_t, std::int64_t, std::int64_t, std::int64_t,         \
                                  std::int64_t, int, int);                                        \
  template void conv2d_backward_input<T>(T*, const T*, const T*, std::int64_t, std::int64_t,      \
                                         std::int64_t, std::int64_t, std::int64_t, std::int64_t,  \
                                         std::int64_t, int, int);                                 \
  template void conv2d_backward_weights<T>(T*, T*, const T*, const T*, std::int64_t,              \
                                           std::int64_t, std::int64_t, std::int64_t,              \
                                           std::int64_t, std::int64_t, std::int64_t, int, int);

ADSY_INSTANTIATE(float)
ADSY_INSTANTIATE(double)
#undef ADSY_INSTANTIATE

}  // namespace adsy::kern
