#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "adsy/layers.hpp"

namespace adsy {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParamSet. Moment buffers are allocated per
// parameter at construction; step() applies the update in place.
template <typename T>
class Adam {
 public:
  Adam(ParamSet<T>& ps, AdamHyper h) : ps_(&ps), h_(h) {
    for (std::size_t i = 0; i < ps.param_count(); ++i) {
      m_.emplace_back(ps.param(i).value.shape());
      v_.emplace_back(ps.param(i).value.shape());
    }
  }

  void step() {
    ++t_;
    const T b1 = static_cast<T>(h_.beta1), b2 = static_cast<T>(h_.beta2);
    const T corr1 = T(1) - static_cast<T>(std::pow(h_.beta1, static_cast<double>(t_)));
    const T corr2 = T(1) - static_cast<T>(std::pow(h_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(h_.lr);
    const T eps = static_cast<T>(h_.eps);
    for (std::size_t pi = 0; pi < ps_->param_count(); ++pi) {
      Parameter<T>& p = ps_->param(pi);
      Tensor<T>& m = m_[pi];
      Tensor<T>& v = v_[pi];
      const std::int64_t n = p.value.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        const T g = p.grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T mhat = m[i] / corr1;
        const T vhat = v[i] / corr2;
        p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::int64_t step_count() const { return t_; }

 private:
  ParamSet<T>* ps_;
  AdamHyper h_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace adsy
