#include "adsy/forward_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adsy/errors.hpp"

namespace adsy {

std::vector<TransitionSample> build_transitions(const PerceptionModel<float>& perception,
                                                const Dataset& d) {
  // locate successor records: same episode, step + 1
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> index;
  for (std::size_t i = 0; i < d.records.size(); ++i)
    index[{d.records[i].episode_id, d.records[i].step}] = i;

  const auto codes = perception.encode_dataset(d);

  std::vector<TransitionSample> out;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& rec = d.records[i];
    const auto succ = index.find({rec.episode_id, rec.step + 1});
    if (succ == index.end()) continue;
    const auto& next_rec = d.records[succ->second];
    if (next_rec.masks.size() != rec.masks.size())
      throw DataError("transition with mismatched object count at episode " +
                      std::to_string(rec.episode_id) + " step " + std::to_string(rec.step));
    TransitionSample s;
    s.action = rec.action;
    for (std::size_t j = 0; j < rec.masks.size(); ++j)
      s.current.objects.emplace_back(rec.masks[j].id, codes[i][j]);
    for (std::size_t j = 0; j < next_rec.masks.size(); ++j)
      s.next.objects.emplace_back(next_rec.masks[j].id, codes[succ->second][j]);
    s.current.canonicalize();
    s.next.canonicalize();
    for (std::size_t j = 0; j < s.current.objects.size(); ++j)
      if (s.current.objects[j].first != s.next.objects[j].first)
        throw DataError("transition with mismatched object ids at episode " +
                        std::to_string(rec.episode_id) + " step " + std::to_string(rec.step));
    out.push_back(std::move(s));
  }
  return out;
}

ForwardConfig ForwardConfig::from_run_config(const RunConfig& rc) {
  ForwardConfig cfg;
  cfg.code_bits = static_cast<int>(rc.get_int("model.code_bits"));
  const std::int64_t locations = rc.get_int("geometry.grid_rows") * rc.get_int("geometry.grid_cols");
  cfg.action_dim = static_cast<int>(locations * locations);
  cfg.hidden = rc.get_int("forward.hidden");
  cfg.heads = static_cast<int>(rc.get_int("forward.heads"));
  cfg.adam.lr = rc.get_real("forward.lr");
  cfg.batch = static_cast<int>(rc.get_int("forward.batch"));
  cfg.epochs = static_cast<int>(rc.get_int("forward.epochs"));
  return cfg;
}

template <typename T>
ForwardModel<T>::ForwardModel(ForwardConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  Rng rng(seed);
  d1_ = Linear<T>(params_, "fwd.d1", cfg_.code_bits + cfg_.action_dim, cfg_.hidden, true, rng);
  d2_ = Linear<T>(params_, "fwd.d2", cfg_.hidden, cfg_.hidden, true, rng);
  attn_.emplace_back(params_, "fwd.attn", cfg_.hidden, cfg_.heads, cfg_.hidden * 4, rng);
  d3_ = Linear<T>(params_, "fwd.d3", cfg_.hidden, cfg_.hidden, true, rng);
  d4_ = Linear<T>(params_, "fwd.d4", cfg_.hidden, cfg_.code_bits, true, rng);
}

template <typename T>
typename ForwardModel<T>::Batch ForwardModel<T>::make_batch(
    const std::vector<TransitionSample>& transitions, const std::vector<std::size_t>& idx) const {
  Batch b;
  b.batch = static_cast<std::int64_t>(idx.size());
  std::int64_t total = 0;
  for (auto ti : idx) {
    const auto k = static_cast<std::int64_t>(transitions[ti].current.objects.size());
    total += k;
    b.k_max = std::max(b.k_max, k);
  }
  const std::int64_t dim = cfg_.code_bits + cfg_.action_dim;
  b.tokens = Tensor<T>(Shape{total, dim});
  b.targets = Tensor<T>(Shape{total, cfg_.code_bits});
  b.row_weights = Tensor<T>(Shape{total});
  b.valid.assign(static_cast<std::size_t>(b.batch * b.k_max), 0);
  std::int64_t seg = 0;
  const int locations = static_cast<int>(std::llround(std::sqrt(static_cast<double>(cfg_.action_dim))));
  for (std::int64_t bi = 0; bi < b.batch; ++bi) {
    const auto& tr = transitions[idx[static_cast<std::size_t>(bi)]];
    const auto k = static_cast<std::int64_t>(tr.current.objects.size());
    for (std::int64_t j = 0; j < k; ++j, ++seg) {
      const auto& [id, code] = tr.current.objects[static_cast<std::size_t>(j)];
      for (int bit = 0; bit < cfg_.code_bits; ++bit)
        b.tokens[seg * dim + bit] = code.bit(bit) ? T(1) : T(0);
      b.tokens[seg * dim + cfg_.code_bits + tr.action.flat(locations)] = T(1);
      const auto& next_code = tr.next.objects[static_cast<std::size_t>(j)].second;
      for (int bit = 0; bit < cfg_.code_bits; ++bit)
        b.targets[seg * cfg_.code_bits + bit] = next_code.bit(bit) ? T(1) : T(0);
      b.row_weights[seg] = T(1) / static_cast<T>(b.batch * k);
      b.slots.push_back(bi * b.k_max + j);
      b.valid[static_cast<std::size_t>(bi * b.k_max + j)] = 1;
    }
  }
  return b;
}

template <typename T>
typename Tape<T>::Id ForwardModel<T>::build_logits(TapeCtx<T>& ctx, const Batch& b) const {
  Tape<T>& t = ctx.tape();
  auto x = t.relu(d1_.apply(ctx, t.input(b.tokens, false)));
  x = t.relu(d2_.apply(ctx, x));
  auto padded = t.scatter_rows(x, b.slots, b.batch * b.k_max);
  padded = attn_[0].apply(ctx, padded, b.batch, b.k_max, b.valid);
  x = t.gather_rows(padded, b.slots);
  x = t.relu(d3_.apply(ctx, x));
  return d4_.apply(ctx, x);
}

template <typename T>
ForwardTrainTrace ForwardModel<T>::train(const std::vector<TransitionSample>& transitions,
                                         std::uint64_t seed) {
  if (transitions.empty()) throw std::invalid_argument("train_forward: no transitions");
  Rng rng(seed);
  Adam<T> opt(params_, cfg_.adam);
  ForwardTrainTrace trace;
  std::vector<std::size_t> order(transitions.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(i))]);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Batch b = make_batch(transitions, idx);
      Tape<T> tape;
      TapeCtx<T> ctx(tape);
      const auto logits = build_logits(ctx, b);
      const auto loss = tape.bce_logits(logits, b.targets, b.row_weights);
      params_.zero_grad();
      tape.backward(loss);
      ctx.harvest();
      opt.step();
      epoch_loss += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(idx.size());
    }
    trace.train_loss.push_back(epoch_loss / static_cast<double>(transitions.size()));
  }
  return trace;
}

template <typename T>
SymbolicState ForwardModel<T>::predict_next(const SymbolicState& s, ActionId a) const {
  SymbolicState canon = s;
  canon.canonicalize();
  TransitionSample probe;
  probe.current = canon;
  probe.action = a;
  probe.next = canon;  // layout only; targets unused
  const Batch b = make_batch({probe}, {0});
  Tape<T> tape;
  TapeCtx<T> ctx(tape);
  const auto logits = build_logits(ctx, b);
  const auto& v = tape.val(logits);
  SymbolicState out = canon;
  for (std::size_t j = 0; j < out.objects.size(); ++j) {
    SymbolCode c;
    c.nbits = static_cast<std::uint8_t>(cfg_.code_bits);
    for (int bit = 0; bit < cfg_.code_bits; ++bit)
      if (v[static_cast<std::int64_t>(j) * cfg_.code_bits + bit] > T(0)) c.set_bit(bit, true);
    out.objects[j].second = c;
  }
  return out;
}

template <typename T>
double ForwardModel<T>::per_bit_accuracy(const std::vector<TransitionSample>& transitions) const {
  if (transitions.empty()) return 0;
  std::int64_t correct = 0, total = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < transitions.size(); start += chunk) {
    const std::size_t end = std::min(transitions.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(transitions, idx);
    Tape<T> tape;
    TapeCtx<T> ctx(tape);
    const auto logits = build_logits(ctx, b);
    const auto& v = tape.val(logits);
    for (std::int64_t i = 0; i < v.numel(); ++i) {
      const bool pred = v[i] > T(0);
      const bool truth = b.targets[i] > T(0.5);
      if (pred == truth) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

template class ForwardModel<float>;
template class ForwardModel<double>;

}  // namespace adsy
