#include "adsy/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "adsy/kernels.hpp"

namespace adsy {

namespace {

// Sum in ascending value order: the result depends only on the multiset of
// addends, not their presentation order.
template <typename T>
T sorted_sum(std::vector<T>& terms) {
  std::sort(terms.begin(), terms.end());
  T acc = T(0);
  for (T v : terms) acc += v;
  return acc;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::emit(Tensor<T> value, bool needs_grad,
                                   std::function<void(Tape&, Id)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
typename Tape<T>::Id Tape<T>::input(Tensor<T> value, bool needs_grad) {
  return emit(std::move(value), needs_grad, nullptr);
}

template <typename T>
Tensor<T>& Tape<T>::grad(Id id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::add_grad_scaled(Id id, const Tensor<T>& g, T factor) {
  if (!needs_grad(id)) return;
  Tensor<T>& dst = grad(id);
  const std::int64_t n = dst.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += factor * g[i];
}

template <typename T>
void Tape<T>::backward(Id root) {
  Node& r = nodes_[static_cast<std::size_t>(root)];
  if (!r.needs_grad) throw std::logic_error("backward: root does not require gradients");
  grad(root).fill(T(1));
  for (Id id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.empty() || !n.backprop) continue;
    n.backprop(*this, id);
  }
}

// --- elementwise ---

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
  require_same_shape(val(a), val(b), "add");
  Tensor<T> y = val(a);
  const Tensor<T>& vb = val(b);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += vb[i];
  return emit(std::move(y), needs_grad(a) || needs_grad(b), [a, b](Tape& t, Id self) {
    const Tensor<T>& gy = t.grad(self);
    t.add_grad_scaled(a, gy, T(1));
    t.add_grad_scaled(b, gy, T(1));
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
  require_same_shape(val(a), val(b), "sub");
  Tensor<T> y = val(a);
  const Tensor<T>& vb = val(b);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] -= vb[i];
  return emit(std::move(y), needs_grad(a) || needs_grad(b), [a, b](Tape& t, Id self) {
    const Tensor<T>& gy = t.grad(self);
    t.add_grad_scaled(a, gy, T(1));
    t.add_grad_scaled(b, gy, T(-1));
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
  require_same_shape(val(a), val(b), "mul");
  Tensor<T> y = val(a);
  const Tensor<T>& vb = val(b);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= vb[i];
  return emit(std::move(y), needs_grad(a) || needs_grad(b), [a, b](Tape& t, Id self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor<T>& ga = t.grad(a);
      const Tensor<T>& vb2 = t.val(b);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i] * vb2[i];
    }
    if (t.needs_grad(b)) {
      Tensor<T>& gb = t.grad(b);
      const Tensor<T>& va2 = t.val(a);
      for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] += gy[i] * va2[i];
    }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::scale(Id a, T c) {
  Tensor<T> y = val(a);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= c;
  return emit(std::move(y), needs_grad(a), [a, c](Tape& t, Id self) {
    t.add_grad_scaled(a, t.grad(self), c);
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_bias(Id x, Id bias) {
  const Tensor<T>& vx = val(x);
  const Tensor<T>& vb = val(bias);
  if (vx.ndim() != 2 || vb.ndim() != 1 || vx.dim(1) != vb.dim(0))
    throw ShapeError("add_bias: shape mismatch " + shape_str(vx.shape()) + " vs " +
                     shape_str(vb.shape()));
  const std::int64_t n = vx.dim(0), d = vx.dim(1);
  Tensor<T> y = vx;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) y[i * d + j] += vb[j];
  return emit(std::move(y), needs_grad(x) || needs_grad(bias), [x, bias, n, d](Tape& t, Id self) {
    const Tensor<T>& gy = t.grad(self);
    t.add_grad_scaled(x, gy, T(1));
    if (t.needs_grad(bias)) {
      Tensor<T>& gb = t.grad(bias);
      for (std::int64_t j = 0; j < d; ++j) {
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) acc += gy[i * d + j];
        gb[j] += acc;
      }
    }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::relu(Id x) {
  Tensor<T> y = val(x);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  return emit(std::move(y), needs_grad(x), [x](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& vx = t.val(x);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i)
      if (vx[i] > T(0)) gx[i] += gy[i];
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sigmoid(Id x) {
  const Tensor<T>& vx = val(x);
  Tensor<T> y(vx.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = sigmoid_scalar(vx[i]);
  return emit(std::move(y), needs_grad(x), [x](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& vy = t.val(self);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * vy[i] * (T(1) - vy[i]);
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::hard_threshold(Id logits) {
  const Tensor<T>& vx = val(logits);
  Tensor<T> y(vx.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = vx[i] > T(0) ? T(1) : T(0);
  return emit(std::move(y), false, nullptr);
}

// --- linear algebra ---

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
  const Tensor<T>& va = val(a);
  const Tensor<T>& vb = val(b);
  if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
    throw ShapeError("matmul: shape mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  const std::int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor<T> y(Shape{m, n});
  kern::mm_nn(y.data(), va.data(), vb.data(), m, k, n);
  return emit(std::move(y), needs_grad(a) || needs_grad(b), [a, b, m, k, n](Tape& t, Id self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.needs_grad(a))
      kern::mm_nt(t.grad(a).data(), gy.data(), t.val(b).data(), m, n, k, true);
    if (t.needs_grad(b))
      kern::mm_tn(t.grad(b).data(), t.val(a).data(), gy.data(), k, m, n, true);
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::bmm(Id a, Id b, bool transpose_b) {
  const Tensor<T>& va = val(a);
  const Tensor<T>& vb = val(b);
  if (va.ndim() != 3 || vb.ndim() != 3 || va.dim(0) != vb.dim(0))
    throw ShapeError("bmm: shape mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  const std::int64_t g = va.dim(0), m = va.dim(1), k = va.dim(2);
  const std::int64_t n = transpose_b ? vb.dim(1) : vb.dim(2);
  if ((transpose_b ? vb.dim(2) : vb.dim(1)) != k)
    throw ShapeError("bmm: inner dim mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  Tensor<T> y(Shape{g, m, n});
  kern::bmm(y.data(), va.data(), vb.data(), g, m, k, n, transpose_b);
  return emit(std::move(y), needs_grad(a) || needs_grad(b),
              [a, b, g, m, k, n, transpose_b](Tape& t, Id self) {
                const Tensor<T>& gy = t.grad(self);
                const Tensor<T>& va2 = t.val(a);
                const Tensor<T>& vb2 = t.val(b);
                const bool ga = t.needs_grad(a), gb = t.needs_grad(b);
                Tensor<T>* pga = ga ? &t.grad(a) : nullptr;
                Tensor<T>* pgb = gb ? &t.grad(b) : nullptr;
#pragma omp parallel for schedule(static)
                for (std::int64_t gi = 0; gi < g; ++gi) {
                  const T* dy = gy.data() + gi * m * n;
                  const T* ap = va2.data() + gi * m * k;
                  const T* bp = vb2.data() + gi * k * n;  // [N,K] if transposed
                  if (ga) {
                    T* dst = pga->data() + gi * m * k;
                    for (std::int64_t i = 0; i < m; ++i)
                      for (std::int64_t q = 0; q < k; ++q) {
                        T acc = T(0);
                        for (std::int64_t j = 0; j < n; ++j)
                          acc += dy[i * n + j] * (transpose_b ? bp[j * k + q] : bp[q * n + j]);
                        dst[i * k + q] += acc;
                      }
                  }
                  if (gb) {
                    T* dst = pgb->data() + gi * k * n;
                    if (transpose_b) {
                      // b is [N,K]; db[j,q] = sum_i dy[i,j] a[i,q]
                      for (std::int64_t j = 0; j < n; ++j)
                        for (std::int64_t q = 0; q < k; ++q) {
                          T acc = T(0);
                          for (std::int64_t i = 0; i < m; ++i) acc += dy[i * n + j] * ap[i * k + q];
                          dst[j * k + q] += acc;
                        }
                    } else {
                      for (std::int64_t q = 0; q < k; ++q)
                        for (std::int64_t j = 0; j < n; ++j) {
                          T acc = T(0);
                          for (std::int64_t i = 0; i < m; ++i) acc += ap[i * k + q] * dy[i * n + j];
                          dst[q * n + j] += acc;
                        }
                    }
                  }
                }
              });
}

// --- convolution / pooling ---

template <typename T>
typename Tape<T>::Id Tape<T>::conv2d(Id x, Id w, Id bias, int stride, int pad) {
  const Tensor<T>& vx = val(x);
  const Tensor<T>& vw = val(w);
  if (vx.ndim() != 4 || vw.ndim() != 4 || vx.dim(1) != vw.dim(1))
    throw ShapeError("conv2d: shape mismatch " + shape_str(vx.shape()) + " vs " +
                     shape_str(vw.shape()));
  const std::int64_t n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
  const std::int64_t f = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  if ((h + 2 * pad - kh) < 0 || (h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) < 0 ||
      (wd + 2 * pad - kw) % stride != 0)
    throw ShapeError("conv2d: input " + shape_str(vx.shape()) + " not compatible with kernel " +
                     shape_str(vw.shape()) + ", stride " + std::to_string(stride) + ", pad " +
                     std::to_string(pad));
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  const T* bias_ptr = nullptr;
  bool bias_grad = false;
  if (bias != kNone) {
    const Tensor<T>& vbias = val(bias);
    if (vbias.ndim() != 1 || vbias.dim(0) != f)
      throw ShapeError("conv2d: bias shape " + shape_str(vbias.shape()) + " vs filters " +
                       std::to_string(f));
    bias_ptr = vbias.data();
    bias_grad = needs_grad(bias);
  }
  Tensor<T> y(Shape{n, f, oh, ow});
  kern::conv2d_forward(y.data(), vx.data(), vw.data(), bias_ptr, n, c, h, wd, f, kh, kw, stride,
                       pad);
  const bool ng = needs_grad(x) || needs_grad(w) || bias_grad;
  return emit(std::move(y), ng, [x, w, bias, n, c, h, wd, f, kh, kw, stride, pad](Tape& t,
                                                                                  Id self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.needs_grad(x))
      kern::conv2d_backward_input(t.grad(x).data(), gy.data(), t.val(w).data(), n, c, h, wd, f, kh,
                                  kw, stride, pad);
    const bool wants_bias = bias != kNone && t.needs_grad(bias);
    if (t.needs_grad(w) || wants_bias)
      kern::conv2d_backward_weights(t.grad(w).data(), wants_bias ? t.grad(bias).data() : nullptr,
                                    gy.data(), t.val(x).data(), n, c, h, wd, f, kh, kw, stride,
                                    pad);
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::global_avg_pool(Id x) {
  const Tensor<T>& vx = val(x);
  if (vx.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-d, got " + shape_str(vx.shape()));
  const std::int64_t n = vx.dim(0), c = vx.dim(1), s = vx.dim(2) * vx.dim(3);
  Tensor<T> y(Shape{n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    T acc = T(0);
    const T* p = vx.data() + i * s;
    for (std::int64_t j = 0; j < s; ++j) acc += p[j];
    y[i] = acc / static_cast<T>(s);
  }
  return emit(std::move(y), needs_grad(x), [x, n, c, s](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    const T inv = T(1) / static_cast<T>(s);
    for (std::int64_t i = 0; i < n * c; ++i) {
      const T g = gy[i] * inv;
      T* p = gx.data() + i * s;
      for (std::int64_t j = 0; j < s; ++j) p[j] += g;
    }
  });
}

// --- normalization ---

template <typename T>
typename Tape<T>::Id Tape<T>::batch_norm(Id x, Id gamma, Id beta, BatchNormState<T>* state,
                                         bool training, T momentum, T eps) {
  const Tensor<T>& vx = val(x);
  if (vx.ndim() != 2 && vx.ndim() != 4)
    throw ShapeError("batch_norm: expected 2-d or 4-d, got " + shape_str(vx.shape()));
  const std::int64_t n = vx.dim(0);
  const std::int64_t c = vx.dim(1);
  const std::int64_t s = vx.ndim() == 4 ? vx.dim(2) * vx.dim(3) : 1;
  if (val(gamma).numel() != c || val(beta).numel() != c)
    throw ShapeError("batch_norm: gamma/beta size mismatch with channels " + std::to_string(c));
  if (training && n < 2)
    throw std::invalid_argument("batch_norm: training mode requires batch size >= 2, got " +
                                std::to_string(n));
  const std::int64_t count = n * s;
  const Tensor<T>& vg = val(gamma);
  const Tensor<T>& vb = val(beta);

  Tensor<T> mean(Shape{c});
  Tensor<T> inv_std(Shape{c});
  if (training) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      T acc = T(0);
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const T* p = vx.data() + (ni * c + ci) * s;
        for (std::int64_t j = 0; j < s; ++j) acc += p[j];
      }
      mean[ci] = acc / static_cast<T>(count);
    }
    for (std::int64_t ci = 0; ci < c; ++ci) {
      T acc = T(0);
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const T* p = vx.data() + (ni * c + ci) * s;
        for (std::int64_t j = 0; j < s; ++j) {
          const T d = p[j] - mean[ci];
          acc += d * d;
        }
      }
      const T var = acc / static_cast<T>(count);
      inv_std[ci] = T(1) / std::sqrt(var + eps);
      if (state) {
        state->running_mean[ci] = (T(1) - momentum) * state->running_mean[ci] + momentum * mean[ci];
        const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
        state->running_var[ci] = (T(1) - momentum) * state->running_var[ci] + momentum * unbiased;
      }
    }
  } else {
    if (!state) throw std::invalid_argument("batch_norm: eval mode requires running stats");
    for (std::int64_t ci = 0; ci < c; ++ci) {
      mean[ci] = state->running_mean[ci];
      inv_std[ci] = T(1) / std::sqrt(state->running_var[ci] + eps);
    }
  }

  Tensor<T> y(vx.shape());
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* p = vx.data() + (ni * c + ci) * s;
      T* q = y.data() + (ni * c + ci) * s;
      for (std::int64_t j = 0; j < s; ++j) q[j] = vg[ci] * (p[j] - mean[ci]) * inv_std[ci] + vb[ci];
    }

  const bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
  return emit(
      std::move(y), ng,
      [x, gamma, beta, n, c, s, count, training, mean = std::move(mean),
       inv_std = std::move(inv_std)](Tape& t, Id self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& vx2 = t.val(x);
        const Tensor<T>& vg2 = t.val(gamma);
        // channel reductions
        for (std::int64_t ci = 0; ci < c; ++ci) {
          T sum_gy = T(0), sum_gy_xhat = T(0);
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* gp = gy.data() + (ni * c + ci) * s;
            const T* xp = vx2.data() + (ni * c + ci) * s;
            for (std::int64_t j = 0; j < s; ++j) {
              const T xhat = (xp[j] - mean[ci]) * inv_std[ci];
              sum_gy += gp[j];
              sum_gy_xhat += gp[j] * xhat;
            }
          }
          if (t.needs_grad(gamma)) t.grad(gamma)[ci] += sum_gy_xhat;
          if (t.needs_grad(beta)) t.grad(beta)[ci] += sum_gy;
          if (t.needs_grad(x)) {
            Tensor<T>& gx = t.grad(x);
            if (training) {
              const T inv_count = T(1) / static_cast<T>(count);
              for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* gp = gy.data() + (ni * c + ci) * s;
                const T* xp = vx2.data() + (ni * c + ci) * s;
                T* dp = gx.data() + (ni * c + ci) * s;
                for (std::int64_t j = 0; j < s; ++j) {
                  const T xhat = (xp[j] - mean[ci]) * inv_std[ci];
                  dp[j] += vg2[ci] * inv_std[ci] *
                           (gp[j] - inv_count * sum_gy - xhat * inv_count * sum_gy_xhat);
                }
              }
            } else {
              for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* gp = gy.data() + (ni * c + ci) * s;
                T* dp = gx.data() + (ni * c + ci) * s;
                for (std::int64_t j = 0; j < s; ++j) dp[j] += gp[j] * vg2[ci] * inv_std[ci];
              }
            }
          }
        }
      });
}

template <typename T>
typename Tape<T>::Id Tape<T>::layer_norm(Id x, Id gamma, Id beta, T eps) {
  const Tensor<T>& vx = val(x);
  const std::int64_t d = vx.dim(vx.ndim() - 1);
  const std::int64_t rows = vx.numel() / d;
  if (val(gamma).numel() != d || val(beta).numel() != d)
    throw ShapeError("layer_norm: gamma/beta size mismatch with last dim " + std::to_string(d));
  const Tensor<T>& vg = val(gamma);
  const Tensor<T>& vb = val(beta);
  Tensor<T> y(vx.shape());
  Tensor<T> mean(Shape{rows});
  Tensor<T> inv_std(Shape{rows});
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* p = vx.data() + r * d;
    T mu = T(0);
    for (std::int64_t j = 0; j < d; ++j) mu += p[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T dv = p[j] - mu;
      var += dv * dv;
    }
    var /= static_cast<T>(d);
    mean[r] = mu;
    inv_std[r] = T(1) / std::sqrt(var + eps);
    T* q = y.data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) q[j] = vg[j] * (p[j] - mu) * inv_std[r] + vb[j];
  }
  const bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
  return emit(std::move(y), ng,
              [x, gamma, beta, rows, d, mean = std::move(mean),
               inv_std = std::move(inv_std)](Tape& t, Id self) {
                const Tensor<T>& gy = t.grad(self);
                const Tensor<T>& vx2 = t.val(x);
                const Tensor<T>& vg2 = t.val(gamma);
                for (std::int64_t r = 0; r < rows; ++r) {
                  const T* gp = gy.data() + r * d;
                  const T* xp = vx2.data() + r * d;
                  T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                  for (std::int64_t j = 0; j < d; ++j) {
                    const T xhat = (xp[j] - mean[r]) * inv_std[r];
                    const T dxhat = gp[j] * vg2[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                    if (t.needs_grad(gamma)) t.grad(gamma)[j] += gp[j] * xhat;
                    if (t.needs_grad(beta)) t.grad(beta)[j] += gp[j];
                  }
                  mean_dxhat /= static_cast<T>(d);
                  mean_dxhat_xhat /= static_cast<T>(d);
                  if (t.needs_grad(x)) {
                    Tensor<T>& gx = t.grad(x);
                    T* dp = gx.data() + r * d;
                    for (std::int64_t j = 0; j < d; ++j) {
                      const T xhat = (xp[j] - mean[r]) * inv_std[r];
                      const T dxhat = gp[j] * vg2[j];
                      dp[j] += inv_std[r] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                  }
                }
              });
}

// --- attention pieces ---

template <typename T>
typename Tape<T>::Id Tape<T>::masked_softmax(Id scores, std::vector<std::uint8_t> key_valid) {
  const Tensor<T>& vs = val(scores);
  if (vs.ndim() != 4) throw ShapeError("masked_softmax: expected 4-d, got " + shape_str(vs.shape()));
  const std::int64_t b = vs.dim(0), hh = vs.dim(1), q = vs.dim(2), k = vs.dim(3);
  if (static_cast<std::int64_t>(key_valid.size()) != b * k)
    throw ShapeError("masked_softmax: key mask size " + std::to_string(key_valid.size()) +
                     " does not match B*K = " + std::to_string(b * k));
  Tensor<T> y(vs.shape());
  std::vector<T> terms;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const std::uint8_t* valid = key_valid.data() + bi * k;
    for (std::int64_t hi = 0; hi < hh; ++hi)
      for (std::int64_t qi = 0; qi < q; ++qi) {
        const T* row = vs.data() + ((bi * hh + hi) * q + qi) * k;
        T* out = y.data() + ((bi * hh + hi) * q + qi) * k;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t ki = 0; ki < k; ++ki)
          if (valid[ki] && row[ki] > mx) mx = row[ki];
        if (mx == -std::numeric_limits<T>::infinity()) {
          for (std::int64_t ki = 0; ki < k; ++ki) out[ki] = T(0);
          continue;
        }
        terms.clear();
        for (std::int64_t ki = 0; ki < k; ++ki)
          if (valid[ki]) terms.push_back(std::exp(row[ki] - mx));
        T denom;
        {
          std::vector<T> tmp = terms;
          denom = sorted_sum(tmp);
        }
        std::size_t vi = 0;
        for (std::int64_t ki = 0; ki < k; ++ki)
          out[ki] = valid[ki] ? terms[vi++] / denom : T(0);
      }
  }
  return emit(std::move(y), needs_grad(scores),
              [scores, b, hh, q, k, key_valid = std::move(key_valid)](Tape& t, Id self) {
                if (!t.needs_grad(scores)) return;
                const Tensor<T>& gy = t.grad(self);
                const Tensor<T>& vy = t.val(self);
                Tensor<T>& gx = t.grad(scores);
                for (std::int64_t bi = 0; bi < b; ++bi)
                  for (std::int64_t hi = 0; hi < hh; ++hi)
                    for (std::int64_t qi = 0; qi < q; ++qi) {
                      const std::int64_t off = ((bi * hh + hi) * q + qi) * k;
                      T dot = T(0);
                      for (std::int64_t ki = 0; ki < k; ++ki) dot += vy[off + ki] * gy[off + ki];
                      for (std::int64_t ki = 0; ki < k; ++ki)
                        gx[off + ki] += vy[off + ki] * (gy[off + ki] - dot);
                    }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::attn_mix(Id probs, Id v) {
  const Tensor<T>& vp = val(probs);
  const Tensor<T>& vv = val(v);
  if (vp.ndim() != 4 || vv.ndim() != 4 || vp.dim(0) != vv.dim(0) || vp.dim(1) != vv.dim(1) ||
      vp.dim(3) != vv.dim(2))
    throw ShapeError("attn_mix: shape mismatch " + shape_str(vp.shape()) + " vs " +
                     shape_str(vv.shape()));
  const std::int64_t b = vp.dim(0), hh = vp.dim(1), q = vp.dim(2), k = vp.dim(3), d = vv.dim(3);
  Tensor<T> y(Shape{b, hh, q, d});
  std::vector<T> terms;
  for (std::int64_t bh = 0; bh < b * hh; ++bh)
    for (std::int64_t qi = 0; qi < q; ++qi) {
      const T* prow = vp.data() + (bh * q + qi) * k;
      T* out = y.data() + (bh * q + qi) * d;
      for (std::int64_t di = 0; di < d; ++di) {
        terms.clear();
        for (std::int64_t ki = 0; ki < k; ++ki)
          if (prow[ki] != T(0)) terms.push_back(prow[ki] * vv[(bh * k + ki) * d + di]);
        out[di] = sorted_sum(terms);
      }
    }
  return emit(std::move(y), needs_grad(probs) || needs_grad(v),
              [probs, v, b, hh, q, k, d](Tape& t, Id self) {
                const Tensor<T>& gy = t.grad(self);
                const Tensor<T>& vp2 = t.val(probs);
                const Tensor<T>& vv2 = t.val(v);
                for (std::int64_t bh = 0; bh < b * hh; ++bh) {
                  if (t.needs_grad(probs)) {
                    Tensor<T>& gp = t.grad(probs);
                    for (std::int64_t qi = 0; qi < q; ++qi)
                      for (std::int64_t ki = 0; ki < k; ++ki) {
                        T acc = T(0);
                        for (std::int64_t di = 0; di < d; ++di)
                          acc += gy[(bh * q + qi) * d + di] * vv2[(bh * k + ki) * d + di];
                        gp[(bh * q + qi) * k + ki] += acc;
                      }
                  }
                  if (t.needs_grad(v)) {
                    Tensor<T>& gv = t.grad(v);
                    for (std::int64_t ki = 0; ki < k; ++ki)
                      for (std::int64_t di = 0; di < d; ++di) {
                        T acc = T(0);
                        for (std::int64_t qi = 0; qi < q; ++qi)
                          acc += vp2[(bh * q + qi) * k + ki] * gy[(bh * q + qi) * d + di];
                        gv[(bh * k + ki) * d + di] += acc;
                      }
                  }
                }
              });
}

// --- layout ---

template <typename T>
typename Tape<T>::Id Tape<T>::reshape(Id x, Shape shape) {
  Tensor<T> y = val(x).reshaped(shape);
  return emit(std::move(y), needs_grad(x), [x](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::permute_0213(Id x) {
  const Tensor<T>& vx = val(x);
  if (vx.ndim() != 4) throw ShapeError("permute_0213: expected 4-d, got " + shape_str(vx.shape()));
  const std::int64_t a = vx.dim(0), b = vx.dim(1), c = vx.dim(2), d = vx.dim(3);
  Tensor<T> y(Shape{a, c, b, d});
  for (std::int64_t ai = 0; ai < a; ++ai)
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const T* src = vx.data() + ((ai * b + bi) * c + ci) * d;
        T* dst = y.data() + ((ai * c + ci) * b + bi) * d;
        for (std::int64_t di = 0; di < d; ++di) dst[di] = src[di];
      }
  return emit(std::move(y), needs_grad(x), [x, a, b, c, d](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t ai = 0; ai < a; ++ai)
      for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const T* src = gy.data() + ((ai * c + ci) * b + bi) * d;
          T* dst = gx.data() + ((ai * b + bi) * c + ci) * d;
          for (std::int64_t di = 0; di < d; ++di) dst[di] += src[di];
        }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::concat_cols(Id a, Id b) {
  const Tensor<T>& va = val(a);
  const Tensor<T>& vb = val(b);
  if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(0) != vb.dim(0))
    throw ShapeError("concat_cols: shape mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  const std::int64_t n = va.dim(0), da = va.dim(1), db = vb.dim(1);
  Tensor<T> y(Shape{n, da + db});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < da; ++j) y[i * (da + db) + j] = va[i * da + j];
    for (std::int64_t j = 0; j < db; ++j) y[i * (da + db) + da + j] = vb[i * db + j];
  }
  return emit(std::move(y), needs_grad(a) || needs_grad(b), [a, b, n, da, db](Tape& t, Id self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < da; ++j) ga[i * da + j] += gy[i * (da + db) + j];
    }
    if (t.needs_grad(b)) {
      Tensor<T>& gb = t.grad(b);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < db; ++j) gb[i * db + j] += gy[i * (da + db) + da + j];
    }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::slice_cols(Id x, std::int64_t start, std::int64_t len) {
  const Tensor<T>& vx = val(x);
  if (vx.ndim() != 2 || start < 0 || start + len > vx.dim(1))
    throw ShapeError("slice_cols: bad slice [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") of " + shape_str(vx.shape()));
  const std::int64_t n = vx.dim(0), d = vx.dim(1);
  Tensor<T> y(Shape{n, len});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < len; ++j) y[i * len + j] = vx[i * d + start + j];
  return emit(std::move(y), needs_grad(x), [x, n, d, start, len](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < len; ++j) gx[i * d + start + j] += gy[i * len + j];
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::gather_rows(Id x, std::vector<std::int64_t> rows) {
  const Tensor<T>& vx = val(x);
  if (vx.ndim() != 2) throw ShapeError("gather_rows: expected 2-d, got " + shape_str(vx.shape()));
  const std::int64_t d = vx.dim(1);
  const std::int64_t m = static_cast<std::int64_t>(rows.size());
  Tensor<T> y(Shape{m, d});
  for (std::int64_t i = 0; i < m; ++i) {
    const T* src = vx.data() + rows[static_cast<std::size_t>(i)] * d;
    T* dst = y.data() + i * d;
    for (std::int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return emit(std::move(y), needs_grad(x), [x, d, m, rows = std::move(rows)](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < m; ++i) {
      T* dst = gx.data() + rows[static_cast<std::size_t>(i)] * d;
      const T* src = gy.data() + i * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::scatter_rows(Id x, std::vector<std::int64_t> dest,
                                           std::int64_t out_rows) {
  const Tensor<T>& vx = val(x);
  if (vx.ndim() != 2 || static_cast<std::int64_t>(dest.size()) != vx.dim(0))
    throw ShapeError("scatter_rows: got " + shape_str(vx.shape()) + " with " +
                     std::to_string(dest.size()) + " destinations");
  const std::int64_t n = vx.dim(0), d = vx.dim(1);
  Tensor<T> y(Shape{out_rows, d});
  for (std::int64_t i = 0; i < n; ++i) {
    T* dst = y.data() + dest[static_cast<std::size_t>(i)] * d;
    const T* src = vx.data() + i * d;
    for (std::int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return emit(std::move(y), needs_grad(x), [x, n, d, dest = std::move(dest)](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < n; ++i) {
      const T* src = gy.data() + dest[static_cast<std::size_t>(i)] * d;
      T* dst = gx.data() + i * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// --- reductions / losses ---

template <typename T>
typename Tape<T>::Id Tape<T>::sum_all(Id x) {
  const Tensor<T>& vx = val(x);
  T acc = T(0);
  for (std::int64_t i = 0; i < vx.numel(); ++i) acc += vx[i];
  Tensor<T> y(Shape{1});
  y[0] = acc;
  return emit(std::move(y), needs_grad(x), [x](Tape& t, Id self) {
    if (!t.needs_grad(x)) return;
    const T g = t.grad(self)[0];
    Tensor<T>& gx = t.grad(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::weighted_mse(Id pred, Tensor<T> target, Tensor<T> row_weights) {
  const Tensor<T>& vp = val(pred);
  require_same_shape(vp, target, "weighted_mse");
  const std::int64_t n = vp.dim(0), d = vp.dim(1);
  if (row_weights.numel() != n)
    throw ShapeError("weighted_mse: weights " + shape_str(row_weights.shape()) + " vs rows " +
                     std::to_string(n));
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    T row = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T diff = vp[i * d + j] - target[i * d + j];
      row += diff * diff;
    }
    acc += row_weights[i] * row / static_cast<T>(d);
  }
  Tensor<T> y(Shape{1});
  y[0] = acc;
  return emit(std::move(y), needs_grad(pred),
              [pred, n, d, target = std::move(target),
               row_weights = std::move(row_weights)](Tape& t, Id self) {
                if (!t.needs_grad(pred)) return;
                const T g = t.grad(self)[0];
                const Tensor<T>& vp2 = t.val(pred);
                Tensor<T>& gp = t.grad(pred);
                for (std::int64_t i = 0; i < n; ++i) {
                  const T w = g * row_weights[i] * T(2) / static_cast<T>(d);
                  for (std::int64_t j = 0; j < d; ++j)
                    gp[i * d + j] += w * (vp2[i * d + j] - target[i * d + j]);
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::bce_logits(Id pred, Tensor<T> target, Tensor<T> row_weights) {
  const Tensor<T>& vp = val(pred);
  require_same_shape(vp, target, "bce_logits");
  const std::int64_t n = vp.dim(0), d = vp.dim(1);
  if (row_weights.numel() != n)
    throw ShapeError("bce_logits: weights " + shape_str(row_weights.shape()) + " vs rows " +
                     std::to_string(n));
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    T row = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T x = vp[i * d + j];
      const T z = target[i * d + j];
      row += std::max(x, T(0)) - x * z + std::log1p(std::exp(-std::abs(x)));
    }
    acc += row_weights[i] * row / static_cast<T>(d);
  }
  Tensor<T> y(Shape{1});
  y[0] = acc;
  return emit(std::move(y), needs_grad(pred),
              [pred, n, d, target = std::move(target),
               row_weights = std::move(row_weights)](Tape& t, Id self) {
                if (!t.needs_grad(pred)) return;
                const T g = t.grad(self)[0];
                const Tensor<T>& vp2 = t.val(pred);
                Tensor<T>& gp = t.grad(pred);
                for (std::int64_t i = 0; i < n; ++i) {
                  const T w = g * row_weights[i] / static_cast<T>(d);
                  for (std::int64_t j = 0; j < d; ++j)
                    gp[i * d + j] += w * (sigmoid_scalar(vp2[i * d + j]) - target[i * d + j]);
                }
              });
}

template class Tape<float>;
template class Tape<double>;

}  // namespace adsy
