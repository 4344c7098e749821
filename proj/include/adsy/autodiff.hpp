#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "adsy/tensor.hpp"

namespace adsy {

// Running statistics owned by a batch-norm layer. Updated in training mode,
// read in eval mode.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  explicit BatchNormState(std::int64_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

enum class CodeMode { SampleSoft, HardThreshold };

// Reverse-mode tape. Nodes are appended in topological order; backward() walks
// them in reverse. All reductions use a fixed (or explicitly order-free)
// summation order, so results do not depend on the OpenMP thread count.
template <typename T>
class Tape {
 public:
  using Id = std::int32_t;
  static constexpr Id kNone = -1;

  Id input(Tensor<T> value, bool needs_grad = false);

  const Tensor<T>& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Gradient of the last backward() root w.r.t. this node; zeros if untouched.
  Tensor<T>& grad(Id id);

  std::size_t size() const { return nodes_.size(); }

  void backward(Id root);

  // --- elementwise / affine ---
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, T c);
  Id add_bias(Id x, Id bias);  // [N,D] + [D]
  Id relu(Id x);
  Id sigmoid(Id x);
  Id hard_threshold(Id logits);  // 1 if sigmoid(x) > 0.5 else 0; no gradient

  // --- linear algebra ---
  Id matmul(Id a, Id b);                  // [M,K]x[K,N]
  Id bmm(Id a, Id b, bool transpose_b);   // [G,M,K]x[G,K,N] (or [G,N,K] transposed)

  // --- convolution / pooling ---
  Id conv2d(Id x, Id w, Id bias, int stride, int pad);  // bias may be kNone
  Id global_avg_pool(Id x);                             // [N,C,H,W] -> [N,C]

  // --- normalization ---
  // x is [N,C] or [N,C,H,W]; stats per channel. Training mode requires N >= 2
  // and updates `state`.
  Id batch_norm(Id x, Id gamma, Id beta, BatchNormState<T>* state, bool training, T momentum,
                T eps);
  Id layer_norm(Id x, Id gamma, Id beta, T eps);  // normalize last dim

  // --- attention pieces ---
  // scores [B,H,Q,K]; key_valid has B*K entries. Rows whose keys are all
  // masked come out as zeros. The max and the exp-sum are computed over the
  // valid-key multiset only, with value-sorted summation, so the result is
  // invariant to key order and to the presence of padded slots.
  Id masked_softmax(Id scores, std::vector<std::uint8_t> key_valid);
  // probs [B,H,Q,K] x v [B,H,K,D] -> [B,H,Q,D], value-sorted summation over K.
  Id attn_mix(Id probs, Id v);

  // --- layout ---
  Id reshape(Id x, Shape shape);
  Id permute_0213(Id x);  // [A,B,C,D] -> [A,C,B,D]
  Id concat_cols(Id a, Id b);
  Id slice_cols(Id x, std::int64_t start, std::int64_t len);
  Id gather_rows(Id x, std::vector<std::int64_t> rows);
  // dest must be unique slot indices; output has out_rows rows, zeros elsewhere.
  Id scatter_rows(Id x, std::vector<std::int64_t> dest, std::int64_t out_rows);

  // --- reductions / losses ---
  Id sum_all(Id x);  // -> [1]
  // sum_n w[n] * mean_d (pred[n,d] - target[n,d])^2  -> [1]
  Id weighted_mse(Id pred, Tensor<T> target, Tensor<T> row_weights);
  // sum_n w[n] * mean_d bce_with_logits(pred[n,d], target[n,d]) -> [1]
  Id bce_logits(Id pred, Tensor<T> target, Tensor<T> row_weights);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, Id)> backprop;  // pushes grad(self) into parents
  };

  Id emit(Tensor<T> value, bool needs_grad, std::function<void(Tape&, Id)> backprop);
  void add_grad_scaled(Id id, const Tensor<T>& g, T factor);  // no-op if !needs_grad

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace adsy
