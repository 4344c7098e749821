#pragma once

#include <cstdint>

// OpenMP-parallel compute kernels. Work is split over independent output
// elements and every output accumulates its terms in a fixed serial order, so
// results are bitwise identical for any thread count. Serial counterparts
// used as test oracles live in kernels_ref.hpp.

namespace adsy::kern {

// C[M,N] = A[M,K] * B[K,N] (+ C if accumulate)
template <typename T>
void mm_nn(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate = false);

// C[M,N] = A[M,K] * B^T, B stored [N,K]
template <typename T>
void mm_nt(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate = false);

// C[M,N] = A^T * B, A stored [K,M], B stored [K,N]
template <typename T>
void mm_tn(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate = false);

// Batched: G independent matmuls. B operand optionally transposed ([G,N,K]).
template <typename T>
void bmm(T* c, const T* a, const T* b, std::int64_t g, std::int64_t m, std::int64_t k,
         std::int64_t n, bool transpose_b);

// Cross-correlation, zero padding. x [N,C,H,W], w [F,C,KH,KW], y [N,F,OH,OW],
// OH = (H + 2p - KH)/s + 1. bias may be null.
template <typename T>
void conv2d_forward(T* y, const T* x, const T* w, const T* bias, std::int64_t n, std::int64_t c,
                    std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                    std::int64_t kw, int stride, int pad);

template <typename T>
void conv2d_backward_input(T* dx, const T* dy, const T* w, std::int64_t n, std::int64_t c,
                           std::int64_t h, std::int64_t wd, std::int64_t f, std::int64_t kh,
                           std::int64_t kw, int stride, int pad);

// dW and optional dbias are accumulated into (caller zeroes or reuses).
template <typename T>
void conv2d_backward_weights(T* dw, T* dbias, const T* dy, const T* x, std::int64_t n,
                             std::int64_t c, std::int64_t h, std::int64_t wd, std::int64_t f,
                             std::int64_t kh, std::int64_t kw, int stride, int pad);

}  // namespace adsy::kern
