#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adsy/autodiff.hpp"
#include "adsy/rng.hpp"
#include "adsy/tensor.hpp"

namespace adsy {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape, zeroed between steps
};

// Ordered registry of trainable parameters and non-trainable buffers
// (batch-norm running stats). Registration order is the checkpoint order.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> init) {
    params_.push_back(std::make_unique<Parameter<T>>());
    Parameter<T>& p = *params_.back();
    p.name = std::move(name);
    p.grad = Tensor<T>(init.shape());
    p.value = std::move(init);
    return p;
  }

  void register_buffer(std::string name, Tensor<T>* buf) {
    buffers_.emplace_back(std::move(name), buf);
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(T(0));
  }

  std::size_t param_count() const { return params_.size(); }
  Parameter<T>& param(std::size_t i) { return *params_[i]; }
  const Parameter<T>& param(std::size_t i) const { return *params_[i]; }
  const std::vector<std::pair<std::string, Tensor<T>*>>& buffers() const { return buffers_; }

  std::int64_t value_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  struct Snapshot {
    std::vector<Tensor<T>> values;
    std::vector<Tensor<T>> buffers;
  };
  Snapshot snapshot() const {
    Snapshot s;
    for (const auto& p : params_) s.values.push_back(p->value);
    for (const auto& [name, buf] : buffers_) s.buffers.push_back(*buf);
    return s;
  }
  void restore(const Snapshot& s) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = s.values[i];
    for (std::size_t i = 0; i < buffers_.size(); ++i) *buffers_[i].second = s.buffers[i];
  }
  Snapshot snapshot_buffers() const {
    Snapshot s;
    for (const auto& [name, buf] : buffers_) s.buffers.push_back(*buf);
    return s;
  }
  void restore_buffers(const Snapshot& s) {
    for (std::size_t i = 0; i < buffers_.size(); ++i) *buffers_[i].second = s.buffers[i];
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers_;
};

// Binds parameters to tape leaves for one forward/backward pass and copies
// the resulting gradients back out.
template <typename T>
class TapeCtx {
 public:
  using Id = typename Tape<T>::Id;
  explicit TapeCtx(Tape<T>& tape) : tape_(&tape) {}

  Tape<T>& tape() { return *tape_; }

  Id use(Parameter<T>& p) {
    for (const auto& [ptr, id] : bound_)
      if (ptr == &p) return id;
    Id id = tape_->input(p.value, true);
    bound_.emplace_back(&p, id);
    return id;
  }

  // Accumulate tape gradients into the bound parameters' grad fields.
  void harvest() {
    for (const auto& [ptr, id] : bound_) {
      const Tensor<T>& g = tape_->grad(id);
      for (std::int64_t i = 0; i < g.numel(); ++i) ptr->grad[i] += g[i];
    }
  }

 private:
  Tape<T>* tape_;
  std::vector<std::pair<Parameter<T>*, Id>> bound_;
};

// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Linear {
  Parameter<T>* w = nullptr;  // [in, out]
  Parameter<T>* b = nullptr;

  Linear() = default;
  Linear(ParamSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, bool bias,
         Rng& rng) {
    w = &ps.add(name + ".w", uniform_fan_in<T>(Shape{in, out}, in, rng));
    if (bias) b = &ps.add(name + ".b", uniform_fan_in<T>(Shape{out}, in, rng));
  }

  typename Tape<T>::Id apply(TapeCtx<T>& ctx, typename Tape<T>::Id x) const {
    auto y = ctx.tape().matmul(x, ctx.use(*w));
    if (b) y = ctx.tape().add_bias(y, ctx.use(*b));
    return y;
  }
};

template <typename T>
struct Conv2d {
  Parameter<T>* w = nullptr;  // [F,C,KH,KW]
  Parameter<T>* b = nullptr;
  int stride = 2, pad = 1;

  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
         std::int64_t k, int stride_, int pad_, bool bias, Rng& rng)
      : stride(stride_), pad(pad_) {
    const std::int64_t fan_in = in_ch * k * k;
    w = &ps.add(name + ".w", uniform_fan_in<T>(Shape{out_ch, in_ch, k, k}, fan_in, rng));
    if (bias) b = &ps.add(name + ".b", uniform_fan_in<T>(Shape{out_ch}, fan_in, rng));
  }

  typename Tape<T>::Id apply(TapeCtx<T>& ctx, typename Tape<T>::Id x) const {
    return ctx.tape().conv2d(x, ctx.use(*w), b ? ctx.use(*b) : Tape<T>::kNone, stride, pad);
  }
};

template <typename T>
struct BatchNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  std::unique_ptr<BatchNormState<T>> state;  // heap-allocated: address registered as buffer
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm() = default;
  BatchNorm(ParamSet<T>& ps, const std::string& name, std::int64_t channels) {
    gamma = &ps.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
    beta = &ps.add(name + ".beta", Tensor<T>(Shape{channels}, T(0)));
    state = std::make_unique<BatchNormState<T>>(channels);
    ps.register_buffer(name + ".running_mean", &state->running_mean);
    ps.register_buffer(name + ".running_var", &state->running_var);
  }

  // update_stats=false runs training-mode normalization without touching the
  // running averages (used by gradient checks).
  typename Tape<T>::Id apply(TapeCtx<T>& ctx, typename Tape<T>::Id x, bool training,
                             bool update_stats = true) const {
    BatchNormState<T>* st = training && !update_stats ? nullptr : state.get();
    return ctx.tape().batch_norm(x, ctx.use(*gamma), ctx.use(*beta), st, training, momentum, eps);
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamSet<T>& ps, const std::string& name, std::int64_t dim) {
    gamma = &ps.add(name + ".gamma", Tensor<T>(Shape{dim}, T(1)));
    beta = &ps.add(name + ".beta", Tensor<T>(Shape{dim}, T(0)));
  }

  typename Tape<T>::Id apply(TapeCtx<T>& ctx, typename Tape<T>::Id x) const {
    return ctx.tape().layer_norm(x, ctx.use(*gamma), ctx.use(*beta), eps);
  }
};

// Standard transformer encoder layer, post-norm: x -> LN(x + MHSA(x)) ->
// LN(· + FFN(·)). No positional encoding anywhere, so the layer is
// permutation-equivariant over tokens; padded slots neither attend nor are
// attended to.
template <typename T>
struct EncoderLayer {
  std::int64_t dim = 0;
  int heads = 0;
  Linear<T> wq, wk, wv, wo, ff1, ff2;
  LayerNorm<T> ln1, ln2;
  mutable typename Tape<T>::Id last_attn = Tape<T>::kNone;  // softmax node of latest apply

  EncoderLayer(ParamSet<T>& ps, const std::string& name, std::int64_t dim_, int heads_,
               std::int64_t ffn_dim, Rng& rng)
      : dim(dim_),
        heads(heads_),
        wq(ps, name + ".wq", dim_, dim_, true, rng),
        wk(ps, name + ".wk", dim_, dim_, true, rng),
        wv(ps, name + ".wv", dim_, dim_, true, rng),
        wo(ps, name + ".wo", dim_, dim_, true, rng),
        ff1(ps, name + ".ff1", dim_, ffn_dim, true, rng),
        ff2(ps, name + ".ff2", ffn_dim, dim_, true, rng),
        ln1(ps, name + ".ln1", dim_),
        ln2(ps, name + ".ln2", dim_) {
    if (dim_ % heads_ != 0)
      throw ConfigError("attention dim " + std::to_string(dim_) + " not divisible by " +
                        std::to_string(heads_) + " heads");
  }

  // x is [B*K, D]; key_valid has B*K flags.
  typename Tape<T>::Id apply(TapeCtx<T>& ctx, typename Tape<T>::Id x, std::int64_t batch,
                             std::int64_t tokens, const std::vector<std::uint8_t>& key_valid) const {
    Tape<T>& t = ctx.tape();
    const std::int64_t dh = dim / heads;
    auto split = [&](typename Tape<T>::Id m) {
      // [B*K, D] -> [B, h, K, dh] -> [B*h, K, dh]
      auto r = t.reshape(m, Shape{batch, tokens, heads, dh});
      auto p = t.permute_0213(r);
      return t.reshape(p, Shape{batch * heads, tokens, dh});
    };
    auto q = split(wq.apply(ctx, x));
    auto k = split(wk.apply(ctx, x));
    auto v = split(wv.apply(ctx, x));
    auto scores = t.scale(t.bmm(q, k, /*transpose_b=*/true),
                          T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh))));
    auto probs = t.masked_softmax(t.reshape(scores, Shape{batch, heads, tokens, tokens}), key_valid);
    last_attn = probs;
    auto ctx4 = t.attn_mix(probs, t.reshape(v, Shape{batch, heads, tokens, dh}));
    auto merged = t.reshape(t.permute_0213(ctx4), Shape{batch * tokens, dim});
    auto attn_out = wo.apply(ctx, merged);
    auto x1 = ln1.apply(ctx, t.add(x, attn_out));
    auto ff = ff2.apply(ctx, t.relu(ff1.apply(ctx, x1)));
    return ln2.apply(ctx, t.add(x1, ff));
  }
};

struct GumbelConfig {
  double tau = 1.0;
  CodeMode mode = CodeMode::SampleSoft;
};

// Binary relaxation: SampleSoft draws logistic noise (difference of two
// Gumbel variables) and returns sigmoid((logits + noise)/tau); the noise is a
// constant w.r.t. gradients. HardThreshold returns exact {0,1} with no
// gradient path.
template <typename T>
typename Tape<T>::Id gumbel_sigmoid(Tape<T>& tape, typename Tape<T>::Id logits,
                                    const GumbelConfig& cfg, Rng* noise_rng) {
  if (cfg.tau <= 0) throw ConfigError("gumbel_sigmoid: tau must be positive");
  if (cfg.mode == CodeMode::HardThreshold) return tape.hard_threshold(logits);
  Tensor<T> noise(tape.val(logits).shape());
  for (std::int64_t i = 0; i < noise.numel(); ++i)
    noise[i] = static_cast<T>(noise_rng->logistic());
  auto n = tape.input(std::move(noise), false);
  return tape.sigmoid(tape.scale(tape.add(logits, n), T(1.0 / cfg.tau)));
}

}  // namespace adsy
