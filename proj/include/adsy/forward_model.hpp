#pragma once

#include <vector>

#include "adsy/model.hpp"

namespace adsy {

// Action-independent symbolic snapshot: hard codes in canonical (object id)
// order.
struct SymbolicState {
  std::vector<std::pair<int, SymbolCode>> objects;

  void canonicalize() {
    std::sort(objects.begin(), objects.end());
  }
  std::vector<SymbolCode> code_multiset() const {
    std::vector<SymbolCode> codes;
    for (const auto& [id, c] : objects) codes.push_back(c);
    std::sort(codes.begin(), codes.end());
    return codes;
  }
  bool operator==(const SymbolicState&) const = default;
};

struct TransitionSample {
  SymbolicState current;
  ActionId action;
  SymbolicState next;
};

// Pairs each record with its successor (the next step of the same episode,
// whose pre-action image is this record's post-action state) and encodes both
// sides with the frozen perception model in evaluation mode. Records without
// a stored successor are skipped.
std::vector<TransitionSample> build_transitions(const PerceptionModel<float>& perception,
                                                const Dataset& d);

struct ForwardConfig {
  int code_bits = 8;
  int action_dim = 36;
  std::int64_t hidden = 128;
  int heads = 4;
  AdamHyper adam;
  int batch = 32;
  int epochs = 100;

  static ForwardConfig from_run_config(const RunConfig& rc);
};

struct ForwardTrainTrace {
  std::vector<double> train_loss;  // per epoch, mean per-bit BCE
};

// m(z): per-object tokens (code ++ one-hot action) through two dense layers,
// one self-attention layer, and two more dense layers to one logit per bit.
template <typename T>
class ForwardModel {
 public:
  ForwardModel(ForwardConfig cfg, std::uint64_t seed);

  const ForwardConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  struct Batch {
    Tensor<T> tokens;   // [N, code_bits + action_dim]
    Tensor<T> targets;  // [N, code_bits]
    Tensor<T> row_weights;
    std::vector<std::int64_t> slots;
    std::vector<std::uint8_t> valid;
    std::int64_t batch = 0;
    std::int64_t k_max = 0;
  };
  Batch make_batch(const std::vector<TransitionSample>& transitions,
                   const std::vector<std::size_t>& idx) const;

  typename Tape<T>::Id build_logits(TapeCtx<T>& ctx, const Batch& b) const;

  ForwardTrainTrace train(const std::vector<TransitionSample>& transitions, std::uint64_t seed);

  SymbolicState predict_next(const SymbolicState& s, ActionId a) const;

  // Fraction of (object, bit) cells predicted correctly.
  double per_bit_accuracy(const std::vector<TransitionSample>& transitions) const;

 private:
  ForwardConfig cfg_;
  ParamSet<T> params_;
  Linear<T> d1_, d2_, d3_, d4_;
  std::vector<EncoderLayer<T>> attn_;  // exactly one layer
};

extern template class ForwardModel<float>;
extern template class ForwardModel<double>;

}  // namespace adsy
