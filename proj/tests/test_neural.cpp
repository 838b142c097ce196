#include <cmath>
#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>
#include <zlib.h>

#include "stepsmith/error.hpp"
#include "stepsmith/neural/checkpoint.hpp"
#include "stepsmith/neural/gradcheck.hpp"
#include "stepsmith/neural/optim.hpp"

using namespace stepsmith;
using namespace stepsmith::nn;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.uniform(-1.0, 1.0);
  return t;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop LSTM recurrence, gate order (i, f, g, o).
std::vector<std::vector<double>> lstm_oracle(const std::vector<std::vector<double>>& xs,
                                             const Tensor<double>& w, const Tensor<double>& u,
                                             const Tensor<double>& b, std::size_t units) {
  const std::size_t in = w.dim(0);
  std::vector<double> h(units, 0.0), c(units, 0.0);
  std::vector<std::vector<double>> out;
  for (const auto& x : xs) {
    std::vector<double> z(4 * units);
    for (std::size_t j = 0; j < 4 * units; ++j) {
      double s = b[j];
      for (std::size_t k = 0; k < in; ++k) s += x[k] * w[k * 4 * units + j];
      for (std::size_t k = 0; k < units; ++k) s += h[k] * u[k * 4 * units + j];
      z[j] = s;
    }
    for (std::size_t j = 0; j < units; ++j) {
      const double i = sig(z[j]);
      const double f = sig(z[units + j]);
      const double g = std::tanh(z[2 * units + j]);
      const double o = sig(z[3 * units + j]);
      c[j] = f * c[j] + i * g;
      h[j] = o * std::tanh(c[j]);
    }
    out.push_back(h);
  }
  return out;
}

std::vector<std::pair<std::string, Var<double>>> named(
    std::initializer_list<std::pair<std::string, Var<double>>> xs) {
  return {xs};
}

void put(std::vector<unsigned char>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

// Independent writer for the weights format, with tensors in caller order.
std::vector<unsigned char> hand_encode(const std::vector<std::pair<std::string, Tensor<float>>>& ts) {
  std::vector<unsigned char> out = {'D', 'D', 'C', 'L'};
  put(out, kWeightsVersion, 4);
  put(out, ts.size(), 4);
  for (const auto& [name, t] : ts) {
    put(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    put(out, t.rank(), 1);
    for (auto d : t.shape()) put(out, d, 4);
    for (float v : t.storage()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put(out, bits, 4);
    }
  }
  put(out, crc32(crc32(0L, Z_NULL, 0), out.data(), static_cast<uInt>(out.size())), 4);
  return out;
}

}  // namespace

TEST(Ops, Activations) {
  auto x = constant<double>(Tensor<double>({3}, {-1.0, 0.0, 2.0}));
  const auto l = leaky_relu(x);
  EXPECT_DOUBLE_EQ(l->value[0], -0.3);
  EXPECT_DOUBLE_EQ(l->value[2], 2.0);
  const auto s = sigmoid(constant<double>(Tensor<double>({3}, {-40.0, 0.0, 40.0})));
  for (double v : s->value.storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_DOUBLE_EQ(s->value[1], 0.5);
}

TEST(Ops, Softmax) {
  const auto u = softmax(constant<double>(Tensor<double>({256}, 3.0)));
  for (double v : u->value.storage()) EXPECT_NEAR(v, 1.0 / 256.0, 1e-15);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto p = softmax(constant<float>(random_tensor({50}, rng, 30.0).cast<float>()));
    double total = 0.0;
    for (float v : p->value.storage()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Ops, MaxPoolFreq) {
  auto x = constant<double>(Tensor<double>({2, 80, 1}, 0.0));
  EXPECT_EQ(maxpool_freq(x)->value.dim(1), 26u);
  auto y = constant<double>(Tensor<double>({2, 26, 1}, 0.0));
  EXPECT_EQ(maxpool_freq(y)->value.dim(1), 8u);
  auto z = constant<double>(Tensor<double>({1, 7, 1}, {1, 5, 2, -1, -3, -2, 9}));
  const auto p = maxpool_freq(z);
  ASSERT_EQ(p->value.dim(1), 2u);
  EXPECT_EQ(p->value[0], 5.0);
  EXPECT_EQ(p->value[1], -1.0);
}

TEST(Ops, Dropout) {
  Rng rng(3);
  Tensor<double> ones({20000}, 1.0);
  auto x = constant<double>(ones);
  EXPECT_EQ(dropout(x, 0.0, true, rng)->value, ones);
  EXPECT_EQ(dropout(x, 0.5, false, rng)->value, ones);
  const auto d = dropout(x, 0.5, true, rng);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : d->value.storage()) {
    mean += v;
    zeros += v == 0.0;
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 2.0);
    }
  }
  mean /= 20000.0;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_GT(zeros, 9000u);
}

TEST(Ops, Losses) {
  Tensor<double> target({4}, {1, 0, 1, 0});
  auto exact = constant<double>(target);
  EXPECT_LE(bce_loss(exact, target)->value[0], 1.2e-7);
  auto half = constant<double>(Tensor<double>({4}, 0.5));
  EXPECT_NEAR(bce_loss(half, target)->value[0], std::log(2.0), 1e-12);
  auto logits = constant<double>(Tensor<double>({256}, 0.0));
  EXPECT_NEAR(softmax_ce_loss(logits, 17)->value[0], std::log(256.0), 1e-12);
  EXPECT_THROW(softmax_ce_loss(logits, 256), DataError);
  EXPECT_THROW(bce_loss(half, Tensor<double>({4}, 0.5)), DataError);
  EXPECT_THROW(bce_loss(half, Tensor<double>({3}, 1.0)), DataError);
}

TEST(Ops, ShapeMismatch) {
  auto x = constant<double>(Tensor<double>({3}, 1.0));
  auto w = constant<double>(Tensor<double>({4, 2}, 1.0));
  EXPECT_THROW(dense(x, w), DataError);
  EXPECT_THROW(add(x, constant<double>(Tensor<double>({2}, 1.0))), DataError);
  EXPECT_THROW(concat<double>({constant<double>(Tensor<double>({2, 3}, 1.0)),
                               constant<double>(Tensor<double>({3, 3}, 1.0))}),
               DataError);
}

TEST(Layers, LstmZeroAndSingleStep) {
  ParameterSet<double> ps;
  Rng rng(4);
  LstmLayer<double> lstm(ps, "l", 5, 3, rng);
  for (auto& [_, p] : ps.items()) p->value.fill(0.0);
  std::vector<Var<double>> xs(4, constant<double>(Tensor<double>({5}, 0.0)));
  for (const auto& h : lstm.forward(xs)) {
    for (double v : h->value.storage()) EXPECT_EQ(v, 0.0);
  }
  LstmLayer<double> fresh(ps, "m", 5, 3, rng);
  auto x = constant<double>(random_tensor({5}, rng));
  EXPECT_EQ(fresh.forward({x})[0]->value, fresh.step(x, fresh.initial_state()).h->value);
}

TEST(Layers, LstmMatchesOracle) {
  ParameterSet<double> ps;
  Rng rng(5);
  LstmLayer<double> lstm(ps, "l", 4, 3, rng);
  lstm.b->value = random_tensor({12}, rng);
  std::vector<Var<double>> xs;
  std::vector<std::vector<double>> raw;
  for (int t = 0; t < 6; ++t) {
    const auto x = random_tensor({4}, rng);
    xs.push_back(constant<double>(x));
    raw.push_back(x.storage());
  }
  const auto got = lstm.forward(xs);
  const auto want = lstm_oracle(raw, lstm.w->value, lstm.u->value, lstm.b->value, 3);
  for (std::size_t t = 0; t < got.size(); ++t) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[t]->value[j], want[t][j], 1e-6);
  }
  // Forget bias starts at 1.
  LstmLayer<double> init(ps, "init", 4, 3, rng);
  for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(init.b->value[j], (j >= 3 && j < 6) ? 1.0 : 0.0);
}

TEST(Layers, ConvLstmZero) {
  ParameterSet<double> ps;
  Rng rng(6);
  ConvLstmLayer<double> conv(ps, "c", 2, 3, rng);
  conv.b->value.fill(0.0);
  std::vector<Var<double>> xs(3, constant<double>(Tensor<double>({4, 5, 2}, 0.0)));
  for (const auto& h : conv.forward(xs)) {
    EXPECT_EQ(h->value.shape(), (Shape{4, 5, 3}));
    for (double v : h->value.storage()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Layers, ConvLstmOneByOneIsLstm) {
  ParameterSet<double> ps;
  Rng rng(7);
  ConvLstmLayer<double> conv(ps, "c", 3, 2, rng);
  conv.b->value = random_tensor({8}, rng);
  // Only the center tap sees a 1x1 input; its (in+units, 4*units) slab is [W; U].
  Tensor<double> w({3, 8}), u({2, 8});
  const std::size_t slab = 5 * 8;
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double v = conv.kernel->value[4 * slab + r * 8 + j];
      if (r < 3) {
        w[r * 8 + j] = v;
      } else {
        u[(r - 3) * 8 + j] = v;
      }
    }
  }
  std::vector<Var<double>> xs;
  std::vector<std::vector<double>> raw;
  for (int t = 0; t < 4; ++t) {
    const auto x = random_tensor({1, 1, 3}, rng);
    xs.push_back(constant<double>(x));
    raw.push_back(x.storage());
  }
  const auto got = conv.forward(xs);
  const auto want = lstm_oracle(raw, w, u, conv.b->value, 2);
  for (std::size_t t = 0; t < got.size(); ++t) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(got[t]->value[j], want[t][j], 1e-12);
  }
}

TEST(Layers, ConvLstmTranslationEquivariance) {
  ParameterSet<double> ps;
  Rng rng(8);
  ConvLstmLayer<double> conv(ps, "c", 1, 2, rng);
  const std::size_t n = 14;
  auto blob = [&](std::size_t r0, std::size_t c0) {
    Tensor<double> x({n, n, 1}, 0.0);
    Rng local(99);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < 2; ++c) x[((r0 + r) * n + c0 + c)] = local.uniform(-1.0, 1.0);
    }
    return constant<double>(x);
  };
  const auto a = conv.forward({blob(5, 5), blob(5, 5)}).back()->value;
  const auto b = conv.forward({blob(6, 7), blob(6, 7)}).back()->value;
  for (std::size_t r = 2; r + 2 < n - 1; ++r) {
    for (std::size_t c = 2; c + 2 < n - 2; ++c) {
      for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_NEAR(b[((r + 1) * n + c + 2) * 2 + k], a[(r * n + c) * 2 + k], 1e-12) << r << "," << c;
      }
    }
  }
}

TEST(GradCheck, Dense) {
  Rng rng(9);
  auto x = parameter<double>(random_tensor({3, 5}, rng));
  auto w = parameter<double>(random_tensor({5, 4}, rng));
  auto b = parameter<double>(random_tensor({4}, rng));
  const auto r = grad_check([&] { return reduce_sum(mul(dense(x, w, b), dense(x, w, b))); },
                            named({{"x", x}, {"w", w}, {"b", b}}));
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param;
  EXPECT_GT(r.coords, 0u);
}

TEST(GradCheck, ElementwiseAndShaping) {
  Rng rng(10);
  auto a = parameter<double>(random_tensor({2, 6}, rng));
  auto b = parameter<double>(random_tensor({2, 6}, rng));
  auto loss = [&] {
    auto s = add(mul(sigmoid(a), tanh(b)), leaky_relu(scale(a, 2.0)));
    auto c = concat<double>({slice(s, 1, 3), reshape(b, {2, 6})});
    return reduce_sum(mul(c, c));
  };
  const auto r = grad_check(loss, named({{"a", a}, {"b", b}}));
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param;
}

TEST(GradCheck, Losses) {
  Rng rng(11);
  auto z = parameter<double>(random_tensor({10}, rng, 2.0));
  const auto r1 = grad_check([&] { return softmax_ce_loss(z, 3); }, named({{"z", z}}));
  EXPECT_LT(r1.max_rel_error, 1e-6);
  Tensor<double> target({10}, 0.0);
  target[2] = target[7] = 1.0;
  const auto r2 = grad_check([&] { return bce_loss(sigmoid(z), target); }, named({{"z", z}}));
  EXPECT_LT(r2.max_rel_error, 1e-6);
  const auto r3 = grad_check([&] { return reduce_sum(mul(softmax(z), z)); }, named({{"z", z}}));
  EXPECT_LT(r3.max_rel_error, 1e-6);
}

TEST(GradCheck, PoolAndConv) {
  Rng rng(12);
  auto x = parameter<double>(random_tensor({4, 9, 2}, rng));
  auto k = parameter<double>(random_tensor({3, 3, 2, 3}, rng, 0.5));
  auto b = parameter<double>(random_tensor({3}, rng));
  auto loss = [&] {
    auto y = maxpool_freq(conv2d_same(x, k, b));
    return reduce_sum(mul(y, y));
  };
  const auto r = grad_check(loss, named({{"x", x}, {"k", k}, {"b", b}}));
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param;
}

TEST(GradCheck, LstmCell) {
  ParameterSet<double> ps;
  Rng rng(13);
  LstmLayer<double> lstm(ps, "l", 4, 3, rng);
  std::vector<Var<double>> xs;
  for (int t = 0; t < 3; ++t) xs.push_back(parameter<double>(random_tensor({4}, rng)));
  auto loss = [&] {
    auto hs = lstm.forward(xs);
    return reduce_sum(mul(hs.back(), hs.back()));
  };
  auto params = ps.items();
  params.emplace_back("x0", xs[0]);
  const auto r = grad_check(loss, params);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param;
}

TEST(GradCheck, ConvLstmCell) {
  ParameterSet<double> ps;
  Rng rng(14);
  ConvLstmLayer<double> conv(ps, "c", 2, 3, rng);
  std::vector<Var<double>> xs = {parameter<double>(random_tensor({4, 6, 2}, rng)),
                                 parameter<double>(random_tensor({4, 6, 2}, rng))};
  auto loss = [&] {
    auto hs = conv.forward(xs);
    return reduce_sum(mul(hs.back(), hs.back()));
  };
  auto params = ps.items();
  params.emplace_back("x0", xs[0]);
  const auto r = grad_check(loss, params);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param;
}

TEST(Adam, FirstStepClosedForm) {
  ParameterSet<double> ps;
  auto p = ps.add("p", Tensor<double>({3}, {0.5, -2.0, 1.0}));
  auto q = ps.add("q", Tensor<double>({2}, {1.0, 1.0}));
  p->ensure_grad().fill(1.0);
  q->ensure_grad().fill(0.0);
  AdamState<double> adam;
  adam_step(adam, ps);
  // m = 0.1 g, v = 0.001 g^2; bias-corrected step = lr * g / (|g| + eps').
  EXPECT_NEAR(p->value[0], 0.5 - 1e-3, 1e-6);
  EXPECT_NEAR(p->value[1], -2.0 - 1e-3, 1e-6);
  EXPECT_EQ(q->value[0], 1.0);
  EXPECT_EQ(q->value[1], 1.0);

  // Group q moving does not disturb p's moments.
  p->ensure_grad().fill(0.0);
  q->ensure_grad().fill(-1.0);
  const double p0 = p->value[0];
  adam_step(adam, ps);
  EXPECT_NEAR(q->value[0], 1.0 + 1e-3 * (1.0 - 0.9) / (1.0 - 0.81) /
                               (std::sqrt((1.0 - 0.999) / (1.0 - 0.999 * 0.999)) + 1e-8),
              1e-9);
  EXPECT_LT(p->value[0], p0);  // momentum from step 1 keeps moving p
}

TEST(Adam, RejectsNonFinite) {
  ParameterSet<float> ps;
  auto p = ps.add("layer.w", Tensor<float>({2}, 1.0f));
  p->ensure_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  AdamState<float> adam;
  try {
    adam_step(adam, ps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
  EXPECT_EQ(p->value[0], 1.0f);
  EXPECT_EQ(adam.step, 0u);
}

TEST(Schedule, ReduceOnPlateau) {
  std::vector<double> flat(6, 1.0);
  EXPECT_EQ(reduce_on_plateau(std::span(flat).first(5), Monitor::Minimize), 1.0);
  EXPECT_EQ(reduce_on_plateau(flat, Monitor::Minimize), 0.5);
  std::vector<double> improving = {5, 4, 3, 2, 1, 0.5, 0.25, 0.1};
  EXPECT_EQ(reduce_on_plateau(improving, Monitor::Minimize), 1.0);
  std::vector<double> rising = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  EXPECT_EQ(reduce_on_plateau(rising, Monitor::Maximize), 1.0);
  std::vector<double> long_flat(11, 1.0);
  EXPECT_EQ(reduce_on_plateau(long_flat, Monitor::Minimize), 0.25);
}

TEST(Schedule, EarlyStop) {
  std::vector<double> flat(126, 0.3);
  const auto d = early_stop(flat, Monitor::Maximize);
  EXPECT_TRUE(d.stop);
  EXPECT_EQ(d.stop_epoch, 121u);
  EXPECT_EQ(d.best_epoch, 1u);
  EXPECT_FALSE(early_stop(std::span(flat).first(120), Monitor::Maximize).stop);

  std::vector<double> improving(200);
  for (std::size_t i = 0; i < improving.size(); ++i) improving[i] = 1.0 / static_cast<double>(i + 1);
  const auto g = early_stop(improving, Monitor::Minimize);
  EXPECT_FALSE(g.stop);
  EXPECT_EQ(g.best_epoch, 200u);

  // A peak after warmup is kept as the best epoch.
  std::vector<double> peak(150, 0.5);
  peak[110] = 0.9;
  const auto p = early_stop(peak, Monitor::Maximize);
  EXPECT_TRUE(p.stop);
  EXPECT_EQ(p.stop_epoch, 131u);
  EXPECT_EQ(p.best_epoch, 111u);
}

TEST(Checkpoint, RoundTripBytes) {
  NamedTensors ts;
  ts.emplace("b", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, -6.5f}));
  ts.emplace("a.w", Tensor<float>({4}, {0.1f, 0.2f, 0.3f, 1e-30f}));
  ts.emplace("scalar", Tensor<float>({1}, 7.0f));
  const auto bytes = encode_weights(ts);
  EXPECT_EQ(decode_weights(bytes), ts);
  EXPECT_EQ(encode_weights(decode_weights(bytes)), bytes);

  const auto dir = std::filesystem::temp_directory_path() / "stepsmith_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "w.ddcl").string();
  save_weights(ts, path);
  EXPECT_EQ(read_file_bytes(path), bytes);
  EXPECT_EQ(load_weights(path), ts);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, LoadsByName) {
  NamedTensors ts;
  ts.emplace("z", Tensor<float>({2}, {1, 2}));
  ts.emplace("a", Tensor<float>({1, 1}, {3}));
  const auto permuted = hand_encode({{"z", ts.at("z")}, {"a", ts.at("a")}});
  EXPECT_EQ(decode_weights(permuted), ts);
  // The library writes sorted by name, which is the same bytes as a sorted hand encoding.
  EXPECT_EQ(encode_weights(ts), hand_encode({{"a", ts.at("a")}, {"z", ts.at("z")}}));
}

TEST(Checkpoint, Corruption) {
  NamedTensors ts;
  ts.emplace("w", Tensor<float>({3}, {1, 2, 3}));
  auto bytes = encode_weights(ts);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_weights(bad), DataError);
  bad = bytes;
  bad[bad.size() - 6] ^= 1;
  EXPECT_THROW(decode_weights(bad), DataError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  EXPECT_THROW(decode_weights(bad), DataError);
  EXPECT_THROW(decode_weights(std::vector<unsigned char>{'D', 'D'}), DataError);
  const auto dup = hand_encode({{"w", ts.at("w")}, {"w", ts.at("w")}});
  EXPECT_THROW(decode_weights(dup), DataError);
  auto version = hand_encode({{"w", ts.at("w")}});
  version[4] = 9;
  EXPECT_THROW(decode_weights(version), DataError);
  EXPECT_THROW(load_weights("/nonexistent/dir/w.ddcl"), DataError);
}

TEST(ParameterSet, SnapshotRestore) {
  ParameterSet<float> ps;
  Rng rng(1);
  Dense<float> d(ps, "d", 3, 2, rng);
  EXPECT_THROW(ps.add("d.w", Tensor<float>({1}, 0.0f)), DataError);
  auto snap = ps.snapshot();
  d.w->value.fill(0.0f);
  ps.restore(snap);
  EXPECT_EQ(ps.snapshot(), snap);
  snap.erase("d.b");
  EXPECT_THROW(ps.restore(snap), DataError);
  snap["d.b"] = Tensor<float>({3}, 0.0f);
  EXPECT_THROW(ps.restore(snap), DataError);
}
