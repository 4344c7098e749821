#pragma once

#include <cstdint>

// Serial reference kernels: straight quadruple loops, no tiling, no OpenMP.
// These are the independent oracles the tests compare the parallel kernels
// against, and the baseline side of the kernel benchmark.

namespace adsy::ref {

template <typename T>
void mm_nn(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n);

template <typename T>
void conv2d_forward(T* y, const T* x, const T* w, const T* bias, std::int64_t n, std::int64_t c,
                    std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                    std::int64_t kw, int stride, int pad);

template <typename T>
void conv2d_backward_input(T* dx, const T* dy, const T* w, std::int64_t n, std::int64_t c,
                           std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                           std::int64_t kw, int stride, int pad);

template <typename T>
void conv2d_backward_weights(T* dw, T* dbias, const T* dy, const T* x, std::int64_t n,
                             std::int64_t c, std::int64_t h, std::int64_t wd, std::int64_t f,
                             std::int64_t kh, std::int64_t kw, int stride, int pad);

}  // namespace adsy::ref
