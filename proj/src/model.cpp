#include "adsy/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adsy/errors.hpp"

namespace adsy {

SymbolCode SymbolCode::parse(const std::string& s) {
  if (s.empty() || s.size() > 16)
    throw std::invalid_argument("symbol code must have 1..16 bits, got '" + s + "'");
  SymbolCode c;
  c.nbits = static_cast<std::uint8_t>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '1')
      c.set_bit(static_cast<int>(i), true);
    else if (s[i] != '0')
      throw std::invalid_argument("symbol code must be binary, got '" + s + "'");
  }
  return c;
}

ModelConfig ModelConfig::from_run_config(const RunConfig& rc) {
  ModelConfig cfg;
  cfg.crop = static_cast<int>(rc.get_int("model.crop"));
  cfg.filters = rc.get_int_list("model.filters");
  cfg.code_bits = static_cast<int>(rc.get_int("model.code_bits"));
  cfg.attn_layers = static_cast<int>(rc.get_int("model.attn_layers"));
  cfg.heads = static_cast<int>(rc.get_int("model.heads"));
  cfg.attn_dim = rc.get_int("model.attn_dim");
  cfg.ffn_dim = rc.get_int("model.ffn_dim");
  cfg.decoder_hidden = rc.get_int_list("model.decoder_hidden");
  cfg.tau = rc.get_real("model.tau");
  const std::int64_t locations = rc.get_int("geometry.grid_rows") * rc.get_int("geometry.grid_cols");
  cfg.action_dim = static_cast<int>(locations * locations);
  cfg.adam.lr = rc.get_real("train.lr");
  cfg.batch = static_cast<int>(rc.get_int("train.batch"));
  cfg.epochs = static_cast<int>(rc.get_int("train.epochs"));
  cfg.patience = static_cast<int>(rc.get_int("train.patience"));
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  if (filters.size() != 4) throw ConfigError("model.filters must list exactly 4 filter counts");
  if (decoder_hidden.size() != 3) throw ConfigError("model.decoder_hidden must list exactly 3 sizes");
  if (crop % 16 != 0 || crop < 16)
    throw ConfigError("model.crop must be a positive multiple of 16 (four stride-2 layers)");
  if (attn_dim % heads != 0) throw ConfigError("model.attn_dim must be divisible by model.heads");
  if (code_bits < 1 || code_bits > 16) throw ConfigError("model.code_bits must be in [1,16]");
  if (tau <= 0) throw ConfigError("model.tau must be positive");
}

template <typename T>
Tensor<T> crop_object(const Tensor<float>& image, const std::vector<std::uint8_t>& mask, int crop) {
  const std::int64_t h = image.dim(0), w = image.dim(1);
  std::int64_t count = 0, rsum = 0, csum = 0;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      if (mask[static_cast<std::size_t>(r * w + c)]) {
        ++count;
        rsum += r;
        csum += c;
      }
  if (count == 0) throw std::invalid_argument("crop_object: empty mask");
  const std::int64_t cr = static_cast<std::int64_t>(
      std::llround(static_cast<double>(rsum) / static_cast<double>(count)));
  const std::int64_t cc = static_cast<std::int64_t>(
      std::llround(static_cast<double>(csum) / static_cast<double>(count)));

  Tensor<T> out(Shape{3, crop, crop});
  const std::int64_t r0 = cr - crop / 2;
  const std::int64_t c0 = cc - crop / 2;
  for (std::int64_t i = 0; i < crop; ++i) {
    const std::int64_t gr = r0 + i;
    const T row_coord = static_cast<T>(2.0 * static_cast<double>(gr) / static_cast<double>(h - 1) - 1.0);
    for (std::int64_t j = 0; j < crop; ++j) {
      const std::int64_t gc = c0 + j;
      const bool inside = gr >= 0 && gr < h && gc >= 0 && gc < w;
      out[0 * crop * crop + i * crop + j] = inside ? static_cast<T>(image[gr * w + gc]) : T(0);
      out[1 * crop * crop + i * crop + j] = row_coord;
      out[2 * crop * crop + i * crop + j] =
          static_cast<T>(2.0 * static_cast<double>(gc) / static_cast<double>(w - 1) - 1.0);
    }
  }
  return out;
}

bool effect_moved(const Effect& e, double threshold) {
  return std::hypot(static_cast<double>(e.dx), static_cast<double>(e.dy)) > threshold;
}

template <typename T>
PerceptionModel<T>::PerceptionModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  std::int64_t in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    conv_.emplace_back(params_, "enc.conv" + std::to_string(i), in_ch, cfg_.filters[static_cast<std::size_t>(i)],
                       4, 2, 1, /*bias=*/false, rng);
    conv_bn_.emplace_back(params_, "enc.bn" + std::to_string(i), cfg_.filters[static_cast<std::size_t>(i)]);
    in_ch = cfg_.filters[static_cast<std::size_t>(i)];
  }
  to_code_ = Linear<T>(params_, "enc.to_code", in_ch, cfg_.code_bits, true, rng);
  token_proj_ =
      Linear<T>(params_, "attn.token_proj", cfg_.code_bits + cfg_.action_dim, cfg_.attn_dim, true, rng);
  for (int i = 0; i < cfg_.attn_layers; ++i)
    attn_.emplace_back(params_, "attn.layer" + std::to_string(i), cfg_.attn_dim, cfg_.heads,
                       cfg_.ffn_dim, rng);
  std::int64_t in_d = cfg_.attn_dim;
  for (int i = 0; i < 3; ++i) {
    dec_.emplace_back(params_, "dec.fc" + std::to_string(i), in_d,
                      cfg_.decoder_hidden[static_cast<std::size_t>(i)], true, rng);
    dec_bn_.emplace_back(params_, "dec.bn" + std::to_string(i),
                         cfg_.decoder_hidden[static_cast<std::size_t>(i)]);
    in_d = cfg_.decoder_hidden[static_cast<std::size_t>(i)];
  }
  dec_out_ = Linear<T>(params_, "dec.out", in_d, 3, true, rng);
}

template <typename T>
typename PerceptionModel<T>::ForwardIds PerceptionModel<T>::build_forward(
    TapeCtx<T>& ctx, const Batch& batch, CodeMode mode, Rng* noise_rng, bool training,
    bool update_stats) const {
  Tape<T>& t = ctx.tape();
  ForwardIds ids;

  auto x = t.input(batch.crops, false);
  for (int i = 0; i < 4; ++i) {
    x = conv_[static_cast<std::size_t>(i)].apply(ctx, x);
    x = conv_bn_[static_cast<std::size_t>(i)].apply(ctx, x, training, update_stats);
    x = t.relu(x);
  }
  auto pooled = t.global_avg_pool(x);
  auto logits = to_code_.apply(ctx, pooled);
  GumbelConfig gcfg;
  gcfg.tau = cfg_.tau;
  gcfg.mode = mode;
  ids.codes = gumbel_sigmoid(t, logits, gcfg, noise_rng);

  auto tokens = token_proj_.apply(ctx, t.concat_cols(ids.codes, t.input(batch.actions, false)));
  auto padded = t.scatter_rows(tokens, batch.slots, batch.batch * batch.k_max);
  for (const auto& layer : attn_)
    padded = layer.apply(ctx, padded, batch.batch, batch.k_max, batch.valid);
  ids.attended = t.gather_rows(padded, batch.slots);

  auto d = ids.attended;
  for (int i = 0; i < 3; ++i) {
    d = dec_[static_cast<std::size_t>(i)].apply(ctx, d);
    d = dec_bn_[static_cast<std::size_t>(i)].apply(ctx, d, training, update_stats);
    d = t.relu(d);
  }
  ids.effects = dec_out_.apply(ctx, d);
  return ids;
}

template <typename T>
typename PerceptionModel<T>::Batch PerceptionModel<T>::make_batch(
    const Dataset& d, const std::vector<std::size_t>& record_idx) const {
  Batch b;
  b.batch = static_cast<std::int64_t>(record_idx.size());
  std::int64_t total = 0;
  b.k_max = 0;
  for (auto ri : record_idx) {
    const auto k = static_cast<std::int64_t>(d.records[ri].masks.size());
    total += k;
    b.k_max = std::max(b.k_max, k);
  }
  b.crops = Tensor<T>(Shape{total, 3, cfg_.crop, cfg_.crop});
  b.actions = Tensor<T>(Shape{total, cfg_.action_dim});
  b.targets = Tensor<T>(Shape{total, 3});
  b.row_weights = Tensor<T>(Shape{total});
  b.valid.assign(static_cast<std::size_t>(b.batch * b.k_max), 0);

  const std::int64_t crop_sz = 3 * cfg_.crop * cfg_.crop;
  std::int64_t seg = 0;
  for (std::int64_t bi = 0; bi < b.batch; ++bi) {
    const auto& rec = d.records[record_idx[static_cast<std::size_t>(bi)]];
    const auto k = static_cast<std::int64_t>(rec.masks.size());
    const int flat = rec.action.flat(d.manifest.geom.locations());
    for (std::int64_t j = 0; j < k; ++j, ++seg) {
      const auto crop = crop_object<T>(rec.image, rec.masks[static_cast<std::size_t>(j)].pixels, cfg_.crop);
      std::copy(crop.data(), crop.data() + crop_sz, b.crops.data() + seg * crop_sz);
      b.actions[seg * cfg_.action_dim + flat] = T(1);
      b.targets[seg * 3 + 0] = static_cast<T>(rec.effects[static_cast<std::size_t>(j)].dx);
      b.targets[seg * 3 + 1] = static_cast<T>(rec.effects[static_cast<std::size_t>(j)].dy);
      b.targets[seg * 3 + 2] = static_cast<T>(rec.effects[static_cast<std::size_t>(j)].dz);
      b.row_weights[seg] = T(1) / static_cast<T>(b.batch * k);
      b.slots.push_back(bi * b.k_max + j);
      b.valid[static_cast<std::size_t>(bi * b.k_max + j)] = 1;
    }
  }
  return b;
}

namespace {

template <typename T>
std::vector<SymbolCode> codes_from_tensor(const Tensor<T>& code_rows, int nbits) {
  std::vector<SymbolCode> out;
  const std::int64_t n = code_rows.dim(0);
  for (std::int64_t i = 0; i < n; ++i) {
    SymbolCode c;
    c.nbits = static_cast<std::uint8_t>(nbits);
    for (int j = 0; j < nbits; ++j)
      if (code_rows[i * nbits + j] > T(0.5)) c.set_bit(j, true);
    out.push_back(c);
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<SymbolCode> PerceptionModel<T>::encode(const Tensor<float>& image,
                                                   const std::vector<ObjectMask>& masks) const {
  const auto k = static_cast<std::int64_t>(masks.size());
  if (k == 0) throw std::invalid_argument("encode: need at least one mask");
  Tensor<T> crops(Shape{k, 3, cfg_.crop, cfg_.crop});
  const std::int64_t crop_sz = 3 * cfg_.crop * cfg_.crop;
  for (std::int64_t j = 0; j < k; ++j) {
    const auto crop = crop_object<T>(image, masks[static_cast<std::size_t>(j)].pixels, cfg_.crop);
    std::copy(crop.data(), crop.data() + crop_sz, crops.data() + j * crop_sz);
  }
  Tape<T> tape;
  TapeCtx<T> ctx(tape);
  auto x = tape.input(std::move(crops), false);
  for (int i = 0; i < 4; ++i) {
    x = conv_[static_cast<std::size_t>(i)].apply(ctx, x);
    x = conv_bn_[static_cast<std::size_t>(i)].apply(ctx, x, false);
    x = tape.relu(x);
  }
  auto logits = to_code_.apply(ctx, tape.global_avg_pool(x));
  auto hard = tape.hard_threshold(logits);
  return codes_from_tensor(tape.val(hard), cfg_.code_bits);
}

template <typename T>
std::vector<std::vector<SymbolCode>> PerceptionModel<T>::encode_dataset(const Dataset& d) const {
  std::vector<std::vector<SymbolCode>> out(d.records.size());
  // chunk records so each tape stays small
  const std::size_t chunk = 128;
  for (std::size_t start = 0; start < d.records.size(); start += chunk) {
    const std::size_t end = std::min(d.records.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(d, idx);
    Tape<T> tape;
    TapeCtx<T> ctx(tape);
    auto x = tape.input(b.crops, false);
    for (int i = 0; i < 4; ++i) {
      x = conv_[static_cast<std::size_t>(i)].apply(ctx, x);
      x = conv_bn_[static_cast<std::size_t>(i)].apply(ctx, x, false);
      x = tape.relu(x);
    }
    auto logits = to_code_.apply(ctx, tape.global_avg_pool(x));
    const auto codes = codes_from_tensor(tape.val(tape.hard_threshold(logits)), cfg_.code_bits);
    std::size_t seg = 0;
    for (std::size_t ri = start; ri < end; ++ri) {
      const auto k = d.records[ri].masks.size();
      out[ri].assign(codes.begin() + static_cast<std::ptrdiff_t>(seg),
                     codes.begin() + static_cast<std::ptrdiff_t>(seg + k));
      seg += k;
    }
  }
  return out;
}

template <typename T>
EffectPrediction PerceptionModel<T>::predict_effects(const Tensor<float>& image,
                                                     const std::vector<ObjectMask>& masks,
                                                     ActionId action) const {
  const auto k = static_cast<std::int64_t>(masks.size());
  if (k == 0) throw std::invalid_argument("predict_effects: need at least one mask");
  // canonical segment order (by id, then first mask pixel) makes the output
  // independent of the presentation order, bit for bit
  std::vector<std::size_t> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  auto first_pixel = [&](std::size_t i) {
    const auto& px = masks[i].pixels;
    for (std::size_t p = 0; p < px.size(); ++p)
      if (px[p]) return p;
    return px.size();
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::make_pair(masks[a].id, first_pixel(a)) < std::make_pair(masks[b].id, first_pixel(b));
  });

  Batch b;
  b.batch = 1;
  b.k_max = k;
  b.crops = Tensor<T>(Shape{k, 3, cfg_.crop, cfg_.crop});
  b.actions = Tensor<T>(Shape{k, cfg_.action_dim});
  b.targets = Tensor<T>(Shape{k, 3});
  b.row_weights = Tensor<T>(Shape{k}, T(1) / static_cast<T>(k));
  b.valid.assign(static_cast<std::size_t>(k), 1);
  const std::int64_t crop_sz = 3 * cfg_.crop * cfg_.crop;
  const int locations = static_cast<int>(std::llround(std::sqrt(static_cast<double>(cfg_.action_dim))));
  for (std::int64_t j = 0; j < k; ++j) {
    const auto crop =
        crop_object<T>(image, masks[order[static_cast<std::size_t>(j)]].pixels, cfg_.crop);
    std::copy(crop.data(), crop.data() + crop_sz, b.crops.data() + j * crop_sz);
    b.actions[j * cfg_.action_dim + action.flat(locations)] = T(1);
    b.slots.push_back(j);
  }

  Tape<T> tape;
  TapeCtx<T> ctx(tape);
  const auto ids = build_forward(ctx, b, CodeMode::HardThreshold, nullptr, false);
  const auto& eff = tape.val(ids.effects);
  const auto codes = codes_from_tensor(tape.val(ids.codes), cfg_.code_bits);
  const auto& att = tape.val(ids.attended);

  EffectPrediction pred;
  pred.effects.resize(static_cast<std::size_t>(k));
  pred.codes.resize(static_cast<std::size_t>(k));
  pred.attended = Tensor<float>(Shape{k, cfg_.attn_dim});
  for (std::int64_t j = 0; j < k; ++j) {
    const auto dst = order[static_cast<std::size_t>(j)];
    pred.effects[dst] = Effect{static_cast<float>(eff[j * 3 + 0]), static_cast<float>(eff[j * 3 + 1]),
                               static_cast<float>(eff[j * 3 + 2])};
    pred.codes[dst] = codes[static_cast<std::size_t>(j)];
    for (std::int64_t c = 0; c < cfg_.attn_dim; ++c)
      pred.attended[static_cast<std::int64_t>(dst) * cfg_.attn_dim + c] =
          static_cast<float>(att[j * cfg_.attn_dim + c]);
  }
  return pred;
}

template <typename T>
double PerceptionModel<T>::eval_loss(const Dataset& d) const {
  double total = 0;
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, cfg_.batch));
  for (std::size_t start = 0; start < d.records.size(); start += chunk) {
    const std::size_t end = std::min(d.records.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(d, idx);
    Tape<T> tape;
    TapeCtx<T> ctx(tape);
    const auto ids = build_forward(ctx, b, CodeMode::HardThreshold, nullptr, false);
    const auto loss = tape.weighted_mse(ids.effects, b.targets, b.row_weights);
    total += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(d.records.size());
}

template <typename T>
TrainTrace PerceptionModel<T>::train(const Dataset& train_set, const Dataset& val_set,
                                     std::uint64_t seed) {
  if (train_set.records.empty() || val_set.records.empty())
    throw std::invalid_argument("train: train and validation sets must be nonempty");
  Rng rng(seed);
  Adam<T> opt(params_, cfg_.adam);
  TrainTrace trace;
  double best_val = std::numeric_limits<double>::infinity();
  typename ParamSet<T>::Snapshot best;

  std::vector<std::size_t> order(train_set.records.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(i))]);

    // batches of cfg_.batch records; a trailing batch with a single segment
    // cannot feed batch norm, so fold it into the previous one
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch));
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (batches.size() >= 2) {
      std::size_t segs = 0;
      for (auto ri : batches.back()) segs += train_set.records[ri].masks.size();
      if (segs < 2) {
        auto tail = batches.back();
        batches.pop_back();
        for (auto ri : tail) batches.back().push_back(ri);
      }
    }

    double epoch_loss = 0;
    for (const auto& batch_idx : batches) {
      const Batch b = make_batch(train_set, batch_idx);
      Tape<T> tape;
      TapeCtx<T> ctx(tape);
      const auto ids = build_forward(ctx, b, CodeMode::SampleSoft, &rng, true);
      const auto loss = tape.weighted_mse(ids.effects, b.targets, b.row_weights);
      params_.zero_grad();
      tape.backward(loss);
      ctx.harvest();
      opt.step();
      epoch_loss += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(batch_idx.size());
    }
    epoch_loss /= static_cast<double>(train_set.records.size());

    const double val = eval_loss(val_set);
    trace.epochs.push_back(TrainEpoch{epoch_loss, val});
    if (val < best_val) {
      best_val = val;
      best = params_.snapshot();
      trace.best_epoch = epoch;
    }
    if (cfg_.patience > 0 && epoch - trace.best_epoch >= cfg_.patience) break;
  }
  if (trace.best_epoch >= 0) params_.restore(best);
  return trace;
}

template <typename T>
EvalMetrics PerceptionModel<T>::evaluate(const Dataset& test_set) const {
  EvalMetrics m;
  const double threshold = pitch_threshold(test_set.manifest.geom);
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, cfg_.batch));
  double abs_err[3] = {0, 0, 0};
  double abs_eff[3] = {0, 0, 0};
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < test_set.records.size(); start += chunk) {
    const std::size_t end = std::min(test_set.records.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(test_set, idx);
    Tape<T> tape;
    TapeCtx<T> ctx(tape);
    const auto ids = build_forward(ctx, b, CodeMode::HardThreshold, nullptr, false);
    const auto& eff = tape.val(ids.effects);
    const std::int64_t n = eff.dim(0);
    for (std::int64_t i = 0; i < n; ++i) {
      Effect pred{static_cast<float>(eff[i * 3 + 0]), static_cast<float>(eff[i * 3 + 1]),
                  static_cast<float>(eff[i * 3 + 2])};
      const Effect truth{static_cast<float>(b.targets[i * 3 + 0]),
                         static_cast<float>(b.targets[i * 3 + 1]),
                         static_cast<float>(b.targets[i * 3 + 2])};
      for (int dim = 0; dim < 3; ++dim) {
        const double t = static_cast<double>(dim == 0 ? truth.dx : dim == 1 ? truth.dy : truth.dz);
        const double p = static_cast<double>(dim == 0 ? pred.dx : dim == 1 ? pred.dy : pred.dz);
        abs_err[dim] += std::abs(p - t);
        abs_eff[dim] += std::abs(t);
      }
      if (effect_moved(pred, threshold) == effect_moved(truth, threshold)) ++correct;
      ++m.objects;
    }
  }
  m.records = static_cast<std::int64_t>(test_set.records.size());
  for (int dim = 0; dim < 3; ++dim) {
    m.mae[dim] = abs_err[dim] / static_cast<double>(m.objects);
    m.mean_abs_effect[dim] = abs_eff[dim] / static_cast<double>(m.objects);
  }
  m.movement_accuracy = static_cast<double>(correct) / static_cast<double>(m.objects);
  return m;
}

template class PerceptionModel<float>;
template class PerceptionModel<double>;
template Tensor<float> crop_object<float>(const Tensor<float>&, const std::vector<std::uint8_t>&, int);
template Tensor<double> crop_object<double>(const Tensor<float>&, const std::vector<std::uint8_t>&, int);

}  // namespace adsy
