#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adsy/adam.hpp"
#include "adsy/config.hpp"
#include "adsy/data.hpp"
#include "adsy/layers.hpp"

namespace adsy {

// Discrete per-object latent: code_bits binary units packed little-endian
// (bit i of `bits` is unit i).
struct SymbolCode {
  std::uint16_t bits = 0;
  std::uint8_t nbits = 8;

  bool bit(int i) const { return (bits >> i) & 1; }
  void set_bit(int i, bool v) {
    if (v)
      bits = static_cast<std::uint16_t>(bits | (1u << i));
    else
      bits = static_cast<std::uint16_t>(bits & ~(1u << i));
  }
  std::string to_string() const {
    std::string s(nbits, '0');
    for (int i = 0; i < nbits; ++i)
      if (bit(i)) s[static_cast<std::size_t>(i)] = '1';
    return s;
  }
  static SymbolCode parse(const std::string& s);

  friend auto operator<=>(const SymbolCode& a, const SymbolCode& b) {
    return a.bits <=> b.bits;
  }
  friend bool operator==(const SymbolCode& a, const SymbolCode& b) { return a.bits == b.bits; }
};

struct ModelConfig {
  int crop = 32;
  std::vector<std::int64_t> filters{16, 32, 64, 128};
  int code_bits = 8;
  int attn_layers = 4;
  int heads = 4;
  std::int64_t attn_dim = 128;
  std::int64_t ffn_dim = 512;
  std::vector<std::int64_t> decoder_hidden{256, 256, 256};
  int action_dim = 36;
  double tau = 1.0;
  AdamHyper adam;
  int batch = 32;
  int epochs = 100;
  int patience = 0;  // 0 = train all epochs, keep best validation checkpoint

  static ModelConfig from_run_config(const RunConfig& rc);
  void validate() const;
};

// Depth crop centered on the segment centroid plus two channels holding each
// pixel's global (row, col) position normalized to [-1,1]; exact affine
// functions of the global position, defined also over the zero-padded border.
template <typename T>
Tensor<T> crop_object(const Tensor<float>& image, const std::vector<std::uint8_t>& mask, int crop);

struct EffectPrediction {
  std::vector<Effect> effects;        // one per input mask, input order
  std::vector<SymbolCode> codes;      // per object, input order
  Tensor<float> attended;             // [k, attn_dim] h_i features, input order
};

struct TrainEpoch {
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainTrace {
  std::vector<TrainEpoch> epochs;
  int best_epoch = -1;  // 0-based index of the checkpointed epoch
};

struct EvalMetrics {
  double mae[3] = {0, 0, 0};
  double mean_abs_effect[3] = {0, 0, 0};
  double movement_accuracy = 0;
  std::int64_t objects = 0;
  std::int64_t records = 0;
};

// Encoder (conv stack -> global average pool -> linear -> gumbel-sigmoid),
// action-conditioned self-attention over the per-object codes, and a
// per-object effect decoder, trained end to end.
template <typename T>
class PerceptionModel {
 public:
  PerceptionModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // Segments packed across records: crops [N,3,h,w]; slot[i] maps segment i
  // to its padded position record*k_max + j; valid flags cover batch*k_max.
  struct Batch {
    Tensor<T> crops;
    Tensor<T> actions;  // [N, action_dim] one-hot per segment
    std::vector<std::int64_t> slots;
    std::vector<std::uint8_t> valid;
    std::int64_t batch = 0;
    std::int64_t k_max = 0;
    Tensor<T> targets;      // [N,3]
    Tensor<T> row_weights;  // [N], 1/(batch * k_record)
  };

  struct ForwardIds {
    typename Tape<T>::Id effects = -1;
    typename Tape<T>::Id codes = -1;
    typename Tape<T>::Id attended = -1;
  };
  ForwardIds build_forward(TapeCtx<T>& ctx, const Batch& batch, CodeMode mode, Rng* noise_rng,
                           bool training, bool update_stats = true) const;

  // Evaluation-mode (hard threshold) code for each mask of one image.
  std::vector<SymbolCode> encode(const Tensor<float>& image,
                                 const std::vector<ObjectMask>& masks) const;

  // Codes for every record of a dataset, batched; index matches d.records.
  std::vector<std::vector<SymbolCode>> encode_dataset(const Dataset& d) const;

  EffectPrediction predict_effects(const Tensor<float>& image,
                                   const std::vector<ObjectMask>& masks, ActionId action) const;

  TrainTrace train(const Dataset& train_set, const Dataset& val_set, std::uint64_t seed);

  EvalMetrics evaluate(const Dataset& test_set) const;

  double pitch_threshold(const GeometryConfig& geom) const {
    return geom.pitch / 2.0;  // moved/not-moved classification threshold
  }

  Batch make_batch(const Dataset& d, const std::vector<std::size_t>& record_idx) const;

 private:
  double eval_loss(const Dataset& d) const;

  ModelConfig cfg_;
  ParamSet<T> params_;
  std::vector<Conv2d<T>> conv_;
  std::vector<BatchNorm<T>> conv_bn_;
  Linear<T> to_code_;
  Linear<T> token_proj_;
  std::vector<EncoderLayer<T>> attn_;
  std::vector<Linear<T>> dec_;
  std::vector<BatchNorm<T>> dec_bn_;
  Linear<T> dec_out_;
};

// Classification rule shared by evaluation and the demo cases: an object
// counts as moved when its in-plane displacement exceeds half a cell pitch.
bool effect_moved(const Effect& e, double threshold);

extern template class PerceptionModel<float>;
extern template class PerceptionModel<double>;
extern template Tensor<float> crop_object<float>(const Tensor<float>&,
                                                 const std::vector<std::uint8_t>&, int);
extern template Tensor<double> crop_object<double>(const Tensor<float>&,
                                                   const std::vector<std::uint8_t>&, int);

}  // namespace adsy
