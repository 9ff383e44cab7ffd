#include <doctest.h>

#include <cmath>
#include <random>

#include "spontts/nn.hpp"

using namespace spontts;
using nn::Mat;

namespace {

Mat randn(long r, long c, std::mt19937_64& g) {
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = rng_normal(g);
  return m;
}

// forward+backward once, then finite differences on a pure re-forward
template <typename Forward, typename Backward>
double fd_check(std::vector<nn::Param*> ps, Forward fwd, Backward bwd) {
  for (auto* p : ps) p->zero_grad();
  auto loss = fwd();
  bwd(loss);
  return nn::max_relative_grad_error(ps, [&] { return fwd().value; });
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("linear layer gradients") {
  std::mt19937_64 g(1);
  nn::Linear lin("l", 4, 3, g);
  Mat x = randn(5, 4, g), t = randn(5, 3, g);
  std::vector<nn::Param*> ps;
  lin.collect(ps);
  double err = fd_check(
      ps, [&] { return nn::mse_loss(lin.forward(x), t); },
      [&](nn::LossResult& l) { lin.backward(l.grad); });
  CHECK(err < 1e-6);
}

TEST_CASE("conv1d output length and gradients") {
  std::mt19937_64 g(2);
  nn::Conv1d conv("c", 3, 4, 3, 2, g);
  Mat x = randn(7, 3, g);
  CHECK(conv.forward(x).rows() == 4);  // ceil(7/2)
  CHECK(conv.forward(randn(1, 3, g)).rows() == 1);  // shorter than the kernel

  Mat t = randn(4, 4, g);
  std::vector<nn::Param*> ps;
  conv.collect(ps);
  double err = fd_check(
      ps, [&] { return nn::mse_loss(conv.forward(x), t); },
      [&](nn::LossResult& l) { conv.backward(l.grad); });
  CHECK(err < 1e-6);
}

TEST_CASE("layer norm gradients") {
  std::mt19937_64 g(3);
  nn::LayerNorm ln("ln", 6);
  ln.gamma.value = randn(1, 6, g);
  ln.beta.value = randn(1, 6, g);
  Mat x = randn(4, 6, g), t = randn(4, 6, g);
  std::vector<nn::Param*> ps;
  ln.collect(ps);
  double err = fd_check(
      ps, [&] { return nn::mse_loss(ln.forward(x), t); },
      [&](nn::LossResult& l) { ln.backward(l.grad); });
  CHECK(err < 1e-6);
}

TEST_CASE("lstm single step matches the gate equations") {
  std::mt19937_64 g(4);
  nn::LSTM lstm("l", 2, 3, false, g);
  Mat x = randn(1, 2, g);
  Mat h = lstm.forward(x);
  // replay: z = x Wx + b (h_prev = 0), gates [i, f, g, o]
  Eigen::RowVectorXd z = x.row(0) * lstm.Wx.value + lstm.b.value.row(0);
  for (int k = 0; k < 3; ++k) {
    double i = 1.0 / (1.0 + std::exp(-z(k)));
    double gg = std::tanh(z(6 + k));
    double o = 1.0 / (1.0 + std::exp(-z(9 + k)));
    double c = i * gg;
    CHECK(h(0, k) == doctest::Approx(o * std::tanh(c)).epsilon(1e-12));
  }
}

TEST_CASE("lstm and bilstm gradients") {
  std::mt19937_64 g(5);
  nn::BiLSTM net("b", 3, 4, g);
  Mat x = randn(6, 3, g), t = randn(6, 8, g);
  std::vector<nn::Param*> ps;
  net.collect(ps);
  double err = fd_check(
      ps, [&] { return nn::mse_loss(net.forward(x), t); },
      [&](nn::LossResult& l) { net.backward(l.grad); });
  CHECK(err < 1e-4);
}

TEST_CASE("gru single step matches the two-bias gate equations") {
  std::mt19937_64 g(6);
  nn::GRU gru("g", 2, 3, g);
  Mat x = randn(1, 2, g);
  Mat h = gru.forward(x);
  Eigen::RowVectorXd zx = x.row(0) * gru.Wx.value + gru.bx.value.row(0);
  Eigen::RowVectorXd zh = gru.bh.value.row(0);  // h_prev = 0
  for (int k = 0; k < 3; ++k) {
    double r = 1.0 / (1.0 + std::exp(-(zx(k) + zh(k))));
    double z = 1.0 / (1.0 + std::exp(-(zx(3 + k) + zh(3 + k))));
    double n = std::tanh(zx(6 + k) + r * zh(6 + k));
    CHECK(h(0, k) == doctest::Approx((1.0 - z) * n).epsilon(1e-12));
  }
}

TEST_CASE("gru gradients over a sequence") {
  std::mt19937_64 g(7);
  nn::GRU gru("g", 3, 4, g);
  Mat x = randn(5, 3, g), t = randn(5, 4, g);
  std::vector<nn::Param*> ps;
  gru.collect(ps);
  double err = fd_check(
      ps, [&] { return nn::mse_loss(gru.forward(x), t); },
      [&](nn::LossResult& l) { gru.backward(l.grad); });
  CHECK(err < 1e-4);
}

TEST_CASE("attention rows sum to one and masked keys get exactly zero") {
  std::mt19937_64 g(8);
  nn::MultiHeadAttention attn("a", 8, 2, g);
  Mat q = randn(5, 8, g), kv = randn(7, 8, g);
  std::vector<bool> mask{true, false, true, true, false, true, true};
  attn.forward(q, kv, mask);
  for (const Mat& head : attn.last_attention()) {
    REQUIRE(head.rows() == 5);
    REQUIRE(head.cols() == 7);
    for (long i = 0; i < head.rows(); ++i) {
      CHECK(head.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(head(i, 1) == 0.0);
      CHECK(head(i, 4) == 0.0);
    }
  }
}

TEST_CASE("a single unmasked key receives weight one") {
  std::mt19937_64 g(9);
  nn::MultiHeadAttention attn("a", 6, 2, g);
  Mat q = randn(4, 6, g), kv = randn(3, 6, g);
  std::vector<bool> mask{false, true, false};
  attn.forward(q, kv, mask);
  for (const Mat& head : attn.last_attention())
    for (long i = 0; i < head.rows(); ++i) {
      CHECK(head(i, 1) == 1.0);
      CHECK(head(i, 0) == 0.0);
      CHECK(head(i, 2) == 0.0);
    }
}

TEST_CASE("attention and transformer block gradients") {
  std::mt19937_64 g(10);
  nn::TransformerBlock block("tb", 6, 2, 10, g);
  Mat x = randn(5, 6, g), t = randn(5, 6, g);
  std::vector<bool> mask{true, true, false, true, true};
  std::vector<nn::Param*> ps;
  block.collect(ps);
  double err = fd_check(
      ps, [&] { return nn::mse_loss(block.forward(x, mask), t); },
      [&](nn::LossResult& l) { block.backward(l.grad); });
  CHECK(err < 1e-4);
}

TEST_CASE("embedding gathers rows and accumulates gradients per id") {
  std::mt19937_64 g(11);
  nn::Embedding emb("e", 5, 3, g);
  auto out = emb.forward({2, 2, 4});
  CHECK((out.row(0) - emb.table.value.row(2)).norm() == 0.0);
  CHECK((out.row(2) - emb.table.value.row(4)).norm() == 0.0);
  emb.table.zero_grad();
  Mat gy = Mat::Ones(3, 3);
  emb.backward(gy);
  CHECK(emb.table.grad(2, 0) == 2.0);
  CHECK(emb.table.grad(4, 0) == 1.0);
  CHECK(emb.table.grad(0, 0) == 0.0);
}

TEST_CASE("positional encoding follows the sinusoid definition") {
  Mat pe = nn::positional_encoding(10, 8);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  for (long pos : {1L, 5L}) {
    for (int i = 0; i < 4; ++i) {
      double rate = std::pow(10000.0, -2.0 * i / 8.0);
      CHECK(pe(pos, 2 * i) == doctest::Approx(std::sin(pos * rate)));
      CHECK(pe(pos, 2 * i + 1) == doctest::Approx(std::cos(pos * rate)));
    }
  }
}

TEST_CASE("cross entropy matches a hand computation with class weights") {
  Mat logits(2, 3);
  logits << 1.0, 2.0, 0.5, -1.0, 0.0, 3.0;
  std::vector<int> targets{1, 2};
  std::vector<double> w{1.0, 2.0, 0.5};
  auto res = nn::cross_entropy(logits, targets, w);
  auto p = nn::softmax_rows(logits);
  double want =
      (-2.0 * std::log(p(0, 1)) + -0.5 * std::log(p(1, 2))) / 2.0;
  CHECK(res.value == doctest::Approx(want).epsilon(1e-12));
  // unweighted grad sanity: rows sum to zero
  auto res2 = nn::cross_entropy(logits, targets);
  CHECK(res2.grad.row(0).sum() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 g(12);
  Mat x = randn(4, 6, g);
  auto s = nn::softmax_rows(x);
  for (long i = 0; i < 4; ++i)
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adam reproduces the hand-computed first two updates") {
  nn::Param p("w", Mat::Zero(1, 1));
  nn::ParamGroup group;
  group.name = "g";
  group.params = {&p};
  group.lr_mult = 2.0;
  nn::Adam adam({group}, 0.9, 0.98, 1e-9);

  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 2; ++t) {
    double grad = (t == 1) ? 0.5 : -0.25;
    p.grad(0, 0) = grad;
    adam.step(0.01);
    m = 0.9 * m + 0.1 * grad;
    v = 0.98 * v + 0.02 * grad * grad;
    double mh = m / (1.0 - std::pow(0.9, t));
    double vh = v / (1.0 - std::pow(0.98, t));
    x -= 0.01 * 2.0 * mh / (std::sqrt(vh) + 1e-9);
    CHECK(p.value(0, 0) == doctest::Approx(x).epsilon(1e-12));
    p.zero_grad();
  }
  CHECK(adam.steps_taken() == 2);
}

TEST_CASE("parameter serialization round-trips and validates names/shapes") {
  std::mt19937_64 g(13);
  nn::Linear a("a", 3, 2, g), b("b", 2, 2, g);
  std::vector<nn::Param*> ps;
  a.collect(ps);
  b.collect(ps);
  std::string blob = nn::serialize_params(ps);

  nn::Linear a2("a", 3, 2, g), b2("b", 2, 2, g);
  std::vector<nn::Param*> ps2;
  a2.collect(ps2);
  b2.collect(ps2);
  nn::deserialize_params(blob, ps2);
  CHECK((a2.W.value - a.W.value).norm() == 0.0);
  CHECK((b2.b.value - b.b.value).norm() == 0.0);

  nn::Linear c("c", 3, 2, g);
  std::vector<nn::Param*> ps3;
  c.collect(ps3);
  CHECK_THROWS(nn::deserialize_params(blob, ps3));  // names unmatched
}

TEST_CASE("losses reduce by mean and match simple oracles") {
  Mat pred(2, 2), t(2, 2);
  pred << 1.0, 2.0, 3.0, 4.0;
  t << 0.0, 2.0, 5.0, 2.5;
  auto mse = nn::mse_loss(pred, t);
  CHECK(mse.value == doctest::Approx((1.0 + 0.0 + 4.0 + 2.25) / 4.0));
  CHECK(mse.grad(1, 0) == doctest::Approx(2.0 * (3.0 - 5.0) / 4.0));
  auto l1 = nn::l1_loss(pred, t);
  CHECK(l1.value == doctest::Approx((1.0 + 0.0 + 2.0 + 1.5) / 4.0));
  CHECK(l1.grad(1, 0) == doctest::Approx(-0.25));
}

}  // TEST_SUITE
