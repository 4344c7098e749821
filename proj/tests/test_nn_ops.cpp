#include <doctest.h>

#include <cmath>

#include "adsy/adam.hpp"
#include "adsy/gradcheck.hpp"
#include "adsy/layers.hpp"
#include "test_util.hpp"

using namespace adsy;
using adsy::test::random_tensor;
using Id = Tape<double>::Id;

TEST_CASE("linear: identity weights pass input through") {
  Tape<double> t;
  Tensor<double> w(Shape{3, 3});
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  Rng rng(20);
  Tensor<double> x = random_tensor({4, 3}, rng);
  auto y = t.add_bias(t.matmul(t.input(x), t.input(w)), t.input(Tensor<double>(Shape{3})));
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(t.val(y)[i] == doctest::Approx(x[i]));
}

TEST_CASE("linear: [[1,2]] x [[1],[1]] + [0] = [[3]]") {
  Tape<double> t;
  auto x = t.input(Tensor<double>(Shape{1, 2}, {1.0, 2.0}));
  auto w = t.input(Tensor<double>(Shape{2, 1}, {1.0, 1.0}));
  auto b = t.input(Tensor<double>(Shape{1}, {0.0}));
  auto y = t.add_bias(t.matmul(x, w), b);
  CHECK(t.val(y)[0] == doctest::Approx(3.0));
}

TEST_CASE("batch_norm: zero-mean unit-variance batch is nearly unchanged") {
  Tape<double> t;
  // two samples per channel at +-1: mean 0, variance 1
  Tensor<double> x(Shape{2, 3});
  for (int c = 0; c < 3; ++c) {
    x[0 * 3 + c] = 1.0;
    x[1 * 3 + c] = -1.0;
  }
  auto y = t.batch_norm(t.input(x), t.input(Tensor<double>(Shape{3}, 1.0)),
                        t.input(Tensor<double>(Shape{3})), nullptr, true, 0.1, 1e-5);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(t.val(y)[i] == doctest::Approx(x[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm: training output has per-channel mean 0 and variance 1") {
  Rng rng(21);
  Tape<double> t;
  Tensor<double> x = random_tensor({16, 4}, rng, -3.0, 5.0);
  auto y = t.batch_norm(t.input(x), t.input(Tensor<double>(Shape{4}, 1.0)),
                        t.input(Tensor<double>(Shape{4})), nullptr, true, 0.1, 1e-9);
  const auto& vy = t.val(y);
  for (int c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < 16; ++n) mean += vy[n * 4 + c];
    mean /= 16;
    for (int n = 0; n < 16; ++n) var += (vy[n * 4 + c] - mean) * (vy[n * 4 + c] - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batch_norm: batch of 1 in training mode is a precondition error") {
  Tape<double> t;
  auto x = t.input(Tensor<double>(Shape{1, 3}, 1.0));
  auto g = t.input(Tensor<double>(Shape{3}, 1.0));
  auto b = t.input(Tensor<double>(Shape{3}));
  CHECK_THROWS_AS(t.batch_norm(x, g, b, nullptr, true, 0.1, 1e-5), std::invalid_argument);
}

TEST_CASE("global_avg_pool: values and analytic gradient") {
  Tape<double> t;
  auto c = t.input(Tensor<double>(Shape{1, 1, 2, 2}, 0.75));
  CHECK(t.val(t.global_avg_pool(c))[0] == doctest::Approx(0.75));

  auto x = t.input(Tensor<double>(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}), true);
  auto y = t.global_avg_pool(x);
  CHECK(t.val(y)[0] == doctest::Approx(2.5));
  t.backward(y);
  for (int i = 0; i < 4; ++i) CHECK(t.grad(x)[i] == doctest::Approx(0.25));
}

TEST_CASE("gumbel_sigmoid: hard threshold follows logit signs") {
  Tape<double> t;
  auto logits = t.input(Tensor<double>(Shape{1, 2}, {-3.0, 3.0}));
  GumbelConfig cfg;
  cfg.mode = CodeMode::HardThreshold;
  auto y = gumbel_sigmoid(t, logits, cfg, nullptr);
  CHECK(t.val(y)[0] == 0.0);
  CHECK(t.val(y)[1] == 1.0);
}

TEST_CASE("gumbel_sigmoid: tau -> 0 saturates to binary") {
  Rng noise(42);
  Tape<double> t;
  Rng rng(22);
  auto logits = t.input(random_tensor({8, 8}, rng, -2.0, 2.0));
  GumbelConfig cfg;
  cfg.tau = 1e-3;
  auto y = gumbel_sigmoid(t, logits, cfg, &noise);
  for (std::int64_t i = 0; i < t.val(y).numel(); ++i) {
    const double v = t.val(y)[i];
    CHECK(std::min(v, 1.0 - v) < 1e-6);
  }
}

TEST_CASE("gumbel_sigmoid: zero logits flip a fair coin") {
  Rng noise(7);
  Tape<double> t;
  auto logits = t.input(Tensor<double>(Shape{10000, 1}));
  GumbelConfig cfg;
  auto y = gumbel_sigmoid(t, logits, cfg, &noise);
  int ones = 0;
  for (std::int64_t i = 0; i < 10000; ++i) ones += t.val(y)[i] > 0.5 ? 1 : 0;
  const double mean = ones / 10000.0;
  CHECK(mean >= 0.48);
  CHECK(mean <= 0.52);
}

TEST_CASE("gumbel_sigmoid rejects non-positive tau") {
  Tape<double> t;
  auto logits = t.input(Tensor<double>(Shape{1, 1}));
  GumbelConfig cfg;
  cfg.tau = 0.0;
  Rng noise(1);
  CHECK_THROWS_AS(gumbel_sigmoid(t, logits, cfg, &noise), ConfigError);
}

namespace {

struct TinyAttention {
  ParamSet<double> ps;
  std::vector<EncoderLayer<double>> layers;
  TinyAttention(int n_layers, std::int64_t dim, int heads, std::uint64_t seed) {
    Rng rng(seed);
    for (int i = 0; i < n_layers; ++i)
      layers.emplace_back(ps, "enc" + std::to_string(i), dim, heads, dim * 4, rng);
  }
  Id apply(TapeCtx<double>& ctx, Id x, std::int64_t b, std::int64_t k,
           const std::vector<std::uint8_t>& valid) {
    Id h = x;
    for (auto& l : layers) h = l.apply(ctx, h, b, k, valid);
    return h;
  }
};

}  // namespace

TEST_CASE("attention with a single token has weight exactly 1") {
  TinyAttention net(1, 8, 4, 33);
  Tape<double> tape;
  TapeCtx<double> ctx(tape);
  Rng rng(23);
  auto x = tape.input(random_tensor({1, 8}, rng), false);
  net.apply(ctx, x, 1, 1, {1});
  const auto& probs = tape.val(net.layers[0].last_attn);  // [1,4,1,1]
  CHECK(probs.numel() == 4);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(probs[i] == 1.0);
}

TEST_CASE("attention is exactly permutation-equivariant") {
  TinyAttention net(2, 8, 2, 34);
  Rng rng(24);
  Tensor<double> tokens = random_tensor({3, 8}, rng);
  const std::vector<std::int64_t> perm{2, 0, 1};
  Tensor<double> permuted(Shape{3, 8});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j) permuted[i * 8 + j] = tokens[perm[static_cast<std::size_t>(i)] * 8 + j];

  auto run = [&](const Tensor<double>& in) {
    Tape<double> tape;
    TapeCtx<double> ctx(tape);
    auto x = tape.input(in, false);
    auto y = net.apply(ctx, x, 1, 3, {1, 1, 1});
    return tape.val(y);
  };
  const auto out = run(tokens);
  const auto out_p = run(permuted);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(out_p[i * 8 + j] == out[perm[static_cast<std::size_t>(i)] * 8 + j]);  // bitwise
}

TEST_CASE("padded tokens influence nothing: finite difference is exactly zero") {
  TinyAttention net(2, 8, 2, 35);
  Rng rng(25);
  Tensor<double> tokens = random_tensor({3, 8}, rng);  // token 2 is padding
  const std::vector<std::uint8_t> valid{1, 1, 0};

  auto run = [&](const Tensor<double>& in) {
    Tape<double> tape;
    TapeCtx<double> ctx(tape);
    auto x = tape.input(in, false);
    auto y = net.apply(ctx, x, 1, 3, valid);
    return tape.val(y);
  };
  const auto base = run(tokens);
  Tensor<double> poked = tokens;
  for (int j = 0; j < 8; ++j) poked[2 * 8 + j] += 17.5 * (j + 1);
  const auto out = run(poked);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 8; ++j) CHECK(out[i * 8 + j] == base[i * 8 + j]);  // bitwise
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamSet<double> ps;
  Rng rng(26);
  auto& p = ps.add("w", random_tensor({4}, rng));
  const Tensor<double> before = p.value;
  Adam<double> opt(ps, {});
  ps.zero_grad();
  opt.step();
  for (int i = 0; i < 4; ++i) CHECK(p.value[i] == before[i]);
}

TEST_CASE("adam: first-step magnitude is approximately lr") {
  ParamSet<double> ps;
  auto& p = ps.add("w", Tensor<double>(Shape{1}, {2.0}));
  AdamHyper h;
  h.lr = 1e-3;
  Adam<double> opt(ps, h);
  p.grad[0] = 0.37;
  opt.step();
  const double delta = std::abs(2.0 - p.value[0]);
  CHECK(delta == doctest::Approx(h.lr).epsilon(1e-6));
}

TEST_CASE("adam: matches a scalar reference on (w-3)^2 and converges") {
  // independent scalar recurrence
  double w_ref = 0.0, m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> ref_traj;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * (w_ref - 3.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w_ref -= lr * mhat / (std::sqrt(vhat) + eps);
    ref_traj.push_back(w_ref);
  }

  ParamSet<double> ps;
  auto& p = ps.add("w", Tensor<double>(Shape{1}, {0.0}));
  AdamHyper h;
  h.lr = lr;
  Adam<double> opt(ps, h);
  std::vector<double> dist;
  for (int t = 1; t <= 100; ++t) {
    ps.zero_grad();
    p.grad[0] = 2.0 * (p.value[0] - 3.0);
    opt.step();
    CHECK(p.value[0] == doctest::Approx(ref_traj[static_cast<std::size_t>(t - 1)]).epsilon(1e-12));
    dist.push_back(std::abs(p.value[0] - 3.0));
  }
  // the reference trajectory descends monotonically until it first crosses 3
  // (around step 40), then rings with a small decaying envelope
  for (std::size_t t = 10; t < 39; ++t) CHECK(dist[t] < dist[t - 1]);
  for (std::size_t t = 39; t < dist.size(); ++t) CHECK(dist[t] < 0.2);
  CHECK(dist.back() < 0.05);
}

TEST_CASE("gradient_check: linear layer below 1e-6") {
  ParamSet<double> ps;
  Rng rng(27);
  Linear<double> lin(ps, "lin", 5, 3, true, rng);
  const Tensor<double> x = random_tensor({6, 5}, rng);
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    TapeCtx<double> ctx(tape);
    auto y = lin.apply(ctx, tape.input(x, false));
    auto l = tape.sum_all(tape.mul(y, y));
    if (with_grad) {
      ps.zero_grad();
      tape.backward(l);
      ctx.harvest();
    }
    return tape.val(l)[0];
  };
  auto report = gradient_check(ps, loss, 10, 1e-5, 301);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gradient_check: attention stack below 1e-4") {
  TinyAttention net(2, 8, 4, 36);
  Rng rng(28);
  const Tensor<double> x = random_tensor({4, 8}, rng);  // B=2, K=2
  const std::vector<std::uint8_t> valid{1, 1, 1, 0};
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    TapeCtx<double> ctx(tape);
    auto y = net.apply(ctx, tape.input(x, false), 2, 2, valid);
    // exclude the padded slot from the loss
    auto picked = tape.gather_rows(y, {0, 1, 2});
    auto l = tape.sum_all(tape.mul(picked, tape.sigmoid(picked)));
    if (with_grad) {
      net.ps.zero_grad();
      tape.backward(l);
      ctx.harvest();
    }
    return tape.val(l)[0];
  };
  auto report = gradient_check(net.ps, loss, 6, 1e-5, 302);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("gradient_check: conv encoder block with fixed gumbel noise below 1e-4") {
  ParamSet<double> ps;
  Rng rng(29);
  Conv2d<double> conv(ps, "conv", 2, 3, 4, 2, 1, false, rng);
  BatchNorm<double> bn(ps, "bn", 3);
  Linear<double> head(ps, "head", 3, 4, true, rng);
  const Tensor<double> x = random_tensor({3, 2, 8, 8}, rng);
  // fixed logistic noise, drawn once
  Rng noise_rng(77);
  Tensor<double> noise(Shape{3, 4});
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = noise_rng.logistic();

  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    TapeCtx<double> ctx(tape);
    auto h1 = tape.relu(bn.apply(ctx, conv.apply(ctx, tape.input(x, false)), true, false));
    auto code_logits = head.apply(ctx, tape.global_avg_pool(h1));
    auto soft = tape.sigmoid(tape.add(code_logits, tape.input(noise, false)));
    auto l = tape.sum_all(tape.mul(soft, soft));
    if (with_grad) {
      ps.zero_grad();
      tape.backward(l);
      ctx.harvest();
    }
    return tape.val(l)[0];
  };
  auto report = gradient_check(ps, loss, 8, 1e-5, 303);
  CHECK(report.max_rel_err < 1e-4);
}
