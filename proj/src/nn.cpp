#include "spontts/nn.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <map>

namespace spontts::nn {

Mat xavier_init(long rows, long cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = a * (2.0 * rng_uniform(rng) - 1.0);
  return m;
}

// --- Linear ----------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng)
    : W(name + ".W", xavier_init(in, out, rng)),
      b(name + ".b", Mat::Zero(1, out)) {}

Mat Linear::forward(const Mat& x) {
  x_ = x;
  return (x * W.value).rowwise() + b.value.row(0);
}

Mat Linear::backward(const Mat& gy) {
  W.grad += x_.transpose() * gy;
  b.grad.row(0) += gy.colwise().sum();
  return gy * W.value.transpose();
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&W);
  out.push_back(&b);
}

// --- Embedding -------------------------------------------------------------

Embedding::Embedding(const std::string& name, int vocab, int dim,
                     std::mt19937_64& rng)
    : table(name + ".table", xavier_init(vocab, dim, rng)) {}

Mat Embedding::forward(const std::vector<int>& ids) {
  ids_ = ids;
  Mat out(static_cast<long>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows())
      throw ValidationError("embedding id out of range: " + std::to_string(ids[i]));
    out.row(static_cast<long>(i)) = table.value.row(ids[i]);
  }
  return out;
}

void Embedding::backward(const Mat& gy) {
  for (std::size_t i = 0; i < ids_.size(); ++i)
    table.grad.row(ids_[i]) += gy.row(static_cast<long>(i));
}

void Embedding::collect(std::vector<Param*>& out) { out.push_back(&table); }

// --- Conv1d ----------------------------------------------------------------

Conv1d::Conv1d(const std::string& name, int in, int out, int k, int s,
               std::mt19937_64& rng)
    : W(name + ".W", xavier_init(static_cast<long>(k) * in, out, rng)),
      b(name + ".b", Mat::Zero(1, out)),
      kernel(k), stride(s), in_ch(in), out_ch(out) {}

Mat Conv1d::forward(const Mat& x) {
  t_in_ = x.rows();
  const int p = (kernel - 1) / 2;
  const long t_out = (t_in_ - 1) / stride + 1;
  cols_ = Mat::Zero(t_out, static_cast<long>(kernel) * in_ch);
  for (long o = 0; o < t_out; ++o) {
    for (int j = 0; j < kernel; ++j) {
      long src = o * stride + j - p;
      if (src >= 0 && src < t_in_)
        cols_.block(o, static_cast<long>(j) * in_ch, 1, in_ch) = x.row(src);
    }
  }
  return (cols_ * W.value).rowwise() + b.value.row(0);
}

Mat Conv1d::backward(const Mat& gy) {
  W.grad += cols_.transpose() * gy;
  b.grad.row(0) += gy.colwise().sum();
  Mat gcols = gy * W.value.transpose();
  Mat gx = Mat::Zero(t_in_, in_ch);
  const int p = (kernel - 1) / 2;
  for (long o = 0; o < gcols.rows(); ++o) {
    for (int j = 0; j < kernel; ++j) {
      long src = o * stride + j - p;
      if (src >= 0 && src < t_in_)
        gx.row(src) += gcols.block(o, static_cast<long>(j) * in_ch, 1, in_ch);
    }
  }
  return gx;
}

void Conv1d::collect(std::vector<Param*>& out) {
  out.push_back(&W);
  out.push_back(&b);
}

// --- ReLU ------------------------------------------------------------------

Mat ReLU::forward(const Mat& x) {
  mask_ = (x.array() > 0.0).cast<double>();
  return x.cwiseProduct(mask_);
}

Mat ReLU::backward(const Mat& gy) { return gy.cwiseProduct(mask_); }

// --- LayerNorm -------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma(name + ".gamma", Mat::Ones(1, dim)),
      beta(name + ".beta", Mat::Zero(1, dim)) {}

Mat LayerNorm::forward(const Mat& x) {
  const long d = x.cols();
  xhat_.resize(x.rows(), d);
  inv_std_.resize(x.rows());
  Mat out(x.rows(), d);
  for (long i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std_(i) = inv;
    xhat_.row(i) = (x.row(i).array() - mu) * inv;
    out.row(i) = xhat_.row(i).cwiseProduct(gamma.value.row(0)) + beta.value.row(0);
  }
  return out;
}

Mat LayerNorm::backward(const Mat& gy) {
  const long d = gy.cols();
  Mat gx(gy.rows(), d);
  for (long i = 0; i < gy.rows(); ++i) {
    Eigen::RowVectorXd dxhat = gy.row(i).cwiseProduct(gamma.value.row(0));
    double m1 = dxhat.mean();
    double m2 = dxhat.cwiseProduct(xhat_.row(i)).mean();
    gx.row(i) =
        (dxhat.array() - m1 - xhat_.row(i).array() * m2) * inv_std_(i);
    gamma.grad.row(0) += gy.row(i).cwiseProduct(xhat_.row(i));
    beta.grad.row(0) += gy.row(i);
  }
  return gx;
}

void LayerNorm::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// --- LSTM ------------------------------------------------------------------

LSTM::LSTM(const std::string& name, int in, int h, bool rev, std::mt19937_64& rng)
    : Wx(name + ".Wx", xavier_init(in, 4L * h, rng)),
      Wh(name + ".Wh", xavier_init(h, 4L * h, rng)),
      b(name + ".b", Mat::Zero(1, 4L * h)),
      in_dim(in), hidden(h), reverse(rev) {}

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Mat LSTM::forward(const Mat& input) {
  Mat x = input;
  if (reverse) x = x.colwise().reverse().eval();
  const long T = x.rows();
  const int h = hidden;
  x_ = x;
  gi_.resize(T, h); gf_.resize(T, h); gg_.resize(T, h); go_.resize(T, h);
  c_.resize(T, h); h_.resize(T, h); tanh_c_.resize(T, h);
  Eigen::RowVectorXd hp = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd cp = Eigen::RowVectorXd::Zero(h);
  for (long t = 0; t < T; ++t) {
    Eigen::RowVectorXd a = x.row(t) * Wx.value + hp * Wh.value + b.value.row(0);
    for (int j = 0; j < h; ++j) {
      gi_(t, j) = sigmoid(a(j));
      gf_(t, j) = sigmoid(a(h + j));
      gg_(t, j) = std::tanh(a(2 * h + j));
      go_(t, j) = sigmoid(a(3 * h + j));
      c_(t, j) = gf_(t, j) * cp(j) + gi_(t, j) * gg_(t, j);
      tanh_c_(t, j) = std::tanh(c_(t, j));
      h_(t, j) = go_(t, j) * tanh_c_(t, j);
    }
    hp = h_.row(t);
    cp = c_.row(t);
  }
  if (reverse) return h_.colwise().reverse();
  return h_;
}

Mat LSTM::backward(const Mat& gout) {
  Mat gy = gout;
  if (reverse) gy = gy.colwise().reverse().eval();
  const long T = x_.rows();
  const int h = hidden;
  Mat gx = Mat::Zero(T, in_dim);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd da(4 * h);
  for (long t = T - 1; t >= 0; --t) {
    Eigen::RowVectorXd dh = gy.row(t) + dh_next;
    Eigen::RowVectorXd cp = t > 0 ? Eigen::RowVectorXd(c_.row(t - 1))
                                  : Eigen::RowVectorXd::Zero(h);
    for (int j = 0; j < h; ++j) {
      double d_o = dh(j) * tanh_c_(t, j);
      double dc = dh(j) * go_(t, j) * (1.0 - tanh_c_(t, j) * tanh_c_(t, j)) +
                  dc_next(j);
      double di = dc * gg_(t, j);
      double df = dc * cp(j);
      double dg = dc * gi_(t, j);
      da(j) = di * gi_(t, j) * (1.0 - gi_(t, j));
      da(h + j) = df * gf_(t, j) * (1.0 - gf_(t, j));
      da(2 * h + j) = dg * (1.0 - gg_(t, j) * gg_(t, j));
      da(3 * h + j) = d_o * go_(t, j) * (1.0 - go_(t, j));
      dc_next(j) = dc * gf_(t, j);
    }
    Wx.grad += x_.row(t).transpose() * da;
    if (t > 0) Wh.grad += h_.row(t - 1).transpose() * da;
    b.grad.row(0) += da;
    gx.row(t) = da * Wx.value.transpose();
    dh_next = da * Wh.value.transpose();
  }
  if (reverse) return gx.colwise().reverse();
  return gx;
}

void LSTM::collect(std::vector<Param*>& out) {
  out.push_back(&Wx);
  out.push_back(&Wh);
  out.push_back(&b);
}

// --- BiLSTM ----------------------------------------------------------------

BiLSTM::BiLSTM(const std::string& name, int in, int hidden, std::mt19937_64& rng)
    : fwd(name + ".fwd", in, hidden, false, rng),
      bwd(name + ".bwd", in, hidden, true, rng) {}

Mat BiLSTM::forward(const Mat& x) {
  Mat f = fwd.forward(x);
  Mat r = bwd.forward(x);
  Mat out(x.rows(), f.cols() + r.cols());
  out << f, r;
  return out;
}

Mat BiLSTM::backward(const Mat& gy) {
  const long h = gy.cols() / 2;
  Mat gf = fwd.backward(gy.leftCols(h));
  Mat gr = bwd.backward(gy.rightCols(h));
  return gf + gr;
}

void BiLSTM::collect(std::vector<Param*>& out) {
  fwd.collect(out);
  bwd.collect(out);
}

// --- GRU -------------------------------------------------------------------

GRU::GRU(const std::string& name, int in, int h, std::mt19937_64& rng)
    : Wx(name + ".Wx", xavier_init(in, 3L * h, rng)),
      Wh(name + ".Wh", xavier_init(h, 3L * h, rng)),
      bx(name + ".bx", Mat::Zero(1, 3L * h)),
      bh(name + ".bh", Mat::Zero(1, 3L * h)),
      in_dim(in), hidden(h) {}

Mat GRU::forward(const Mat& x) {
  const long T = x.rows();
  const int h = hidden;
  x_ = x;
  r_.resize(T, h); z_.resize(T, h); n_.resize(T, h); h_.resize(T, h);
  u_.resize(T, h);
  Eigen::RowVectorXd hp = Eigen::RowVectorXd::Zero(h);
  for (long t = 0; t < T; ++t) {
    Eigen::RowVectorXd ax = x.row(t) * Wx.value + bx.value.row(0);
    Eigen::RowVectorXd ah = hp * Wh.value + bh.value.row(0);
    for (int j = 0; j < h; ++j) {
      r_(t, j) = sigmoid(ax(j) + ah(j));
      z_(t, j) = sigmoid(ax(h + j) + ah(h + j));
      u_(t, j) = ah(2 * h + j);
      n_(t, j) = std::tanh(ax(2 * h + j) + r_(t, j) * u_(t, j));
      h_(t, j) = (1.0 - z_(t, j)) * n_(t, j) + z_(t, j) * hp(j);
    }
    hp = h_.row(t);
  }
  return h_;
}

Mat GRU::backward(const Mat& gy) {
  const long T = x_.rows();
  const int h = hidden;
  Mat gx = Mat::Zero(T, in_dim);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd dax(3 * h), dah(3 * h);
  for (long t = T - 1; t >= 0; --t) {
    Eigen::RowVectorXd hp = t > 0 ? Eigen::RowVectorXd(h_.row(t - 1))
                                  : Eigen::RowVectorXd::Zero(h);
    Eigen::RowVectorXd dh = gy.row(t) + dh_next;
    Eigen::RowVectorXd dh_prev(h);
    for (int j = 0; j < h; ++j) {
      double dz = dh(j) * (hp(j) - n_(t, j));
      double dn = dh(j) * (1.0 - z_(t, j));
      dh_prev(j) = dh(j) * z_(t, j);
      double dan = dn * (1.0 - n_(t, j) * n_(t, j));
      double dr = dan * u_(t, j);
      double du = dan * r_(t, j);
      double dar = dr * r_(t, j) * (1.0 - r_(t, j));
      double daz = dz * z_(t, j) * (1.0 - z_(t, j));
      dax(j) = dar; dax(h + j) = daz; dax(2 * h + j) = dan;
      dah(j) = dar; dah(h + j) = daz; dah(2 * h + j) = du;
    }
    Wx.grad += x_.row(t).transpose() * dax;
    Wh.grad += hp.transpose() * dah;
    bx.grad.row(0) += dax;
    bh.grad.row(0) += dah;
    gx.row(t) = dax * Wx.value.transpose();
    dh_next = dh_prev + dah * Wh.value.transpose();
  }
  return gx;
}

void GRU::collect(std::vector<Param*>& out) {
  out.push_back(&Wx);
  out.push_back(&Wh);
  out.push_back(&bx);
  out.push_back(&bh);
}

// --- MultiHeadAttention ----------------------------------------------------

MultiHeadAttention::MultiHeadAttention(const std::string& name, int d, int h,
                                       std::mt19937_64& rng)
    : wq(name + ".wq", d, d, rng),
      wk(name + ".wk", d, d, rng),
      wv(name + ".wv", d, d, rng),
      wo(name + ".wo", d, d, rng),
      dim(d), heads(h) {
  if (d % h != 0) throw ValidationError("attention dim must divide heads");
}

Mat MultiHeadAttention::forward(const Mat& query_in, const Mat& kv_in,
                                const std::vector<bool>& key_mask) {
  if (query_in.cols() != dim || kv_in.cols() != dim)
    throw ValidationError("attention dimension mismatch");
  if (key_mask.size() != static_cast<std::size_t>(kv_in.rows()))
    throw ValidationError("attention key mask length mismatch");
  key_mask_ = key_mask;
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat Q = wq.forward(query_in);
  Mat K = wk.forward(kv_in);
  Mat V = wv.forward(kv_in);
  const long n = query_in.rows(), m = kv_in.rows();
  q_.clear(); k_.clear(); v_.clear(); attn_.clear(); ctx_.clear();
  concat_.resize(n, dim);
  for (int hh = 0; hh < heads; ++hh) {
    Mat Qh = Q.middleCols(static_cast<long>(hh) * dh, dh);
    Mat Kh = K.middleCols(static_cast<long>(hh) * dh, dh);
    Mat Vh = V.middleCols(static_cast<long>(hh) * dh, dh);
    Mat S = Qh * Kh.transpose() * scale;
    Mat A = Mat::Zero(n, m);
    for (long i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (long j = 0; j < m; ++j)
        if (key_mask[j]) mx = std::max(mx, S(i, j));
      if (!std::isfinite(mx)) continue;  // no valid keys: zero row
      double sum = 0.0;
      for (long j = 0; j < m; ++j)
        if (key_mask[j]) {
          A(i, j) = std::exp(S(i, j) - mx);
          sum += A(i, j);
        }
      for (long j = 0; j < m; ++j)
        if (key_mask[j]) A(i, j) /= sum;
    }
    Mat C = A * Vh;
    concat_.middleCols(static_cast<long>(hh) * dh, dh) = C;
    q_.push_back(std::move(Qh));
    k_.push_back(std::move(Kh));
    v_.push_back(std::move(Vh));
    attn_.push_back(std::move(A));
    ctx_.push_back(std::move(C));
  }
  return wo.forward(concat_);
}

std::pair<Mat, Mat> MultiHeadAttention::backward(const Mat& gy) {
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat gconcat = wo.backward(gy);
  const long n = gconcat.rows();
  const long m = static_cast<long>(key_mask_.size());
  Mat gQ(n, dim), gK(m, dim), gV(m, dim);
  for (int hh = 0; hh < heads; ++hh) {
    Mat gC = gconcat.middleCols(static_cast<long>(hh) * dh, dh);
    const Mat& A = attn_[hh];
    Mat gA = gC * v_[hh].transpose();
    Mat gS = Mat::Zero(n, m);
    for (long i = 0; i < n; ++i) {
      double dot = 0.0;
      for (long j = 0; j < m; ++j) dot += A(i, j) * gA(i, j);
      for (long j = 0; j < m; ++j)
        if (key_mask_[j]) gS(i, j) = A(i, j) * (gA(i, j) - dot);
    }
    gQ.middleCols(static_cast<long>(hh) * dh, dh) = gS * k_[hh] * scale;
    gK.middleCols(static_cast<long>(hh) * dh, dh) = gS.transpose() * q_[hh] * scale;
    gV.middleCols(static_cast<long>(hh) * dh, dh) = A.transpose() * gC;
  }
  Mat gq_in = wq.backward(gQ);
  Mat gkv_in = wk.backward(gK) + wv.backward(gV);
  return {gq_in, gkv_in};
}

void MultiHeadAttention::collect(std::vector<Param*>& out) {
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  wo.collect(out);
}

// --- TransformerBlock ------------------------------------------------------

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads,
                                   int ff_dim, std::mt19937_64& rng)
    : attn(name + ".attn", dim, heads, rng),
      ln1(name + ".ln1", dim),
      ln2(name + ".ln2", dim),
      ff1(name + ".ff1", dim, ff_dim, rng),
      ff2(name + ".ff2", ff_dim, dim, rng) {}

Mat TransformerBlock::forward(const Mat& x, const std::vector<bool>& mask) {
  Mat a = attn.forward(x, x, mask);
  Mat y1 = ln1.forward(x + a);
  Mat f = ff2.forward(relu.forward(ff1.forward(y1)));
  return ln2.forward(y1 + f);
}

Mat TransformerBlock::backward(const Mat& gy) {
  Mat g2 = ln2.backward(gy);
  Mat gy1 = g2 + ff1.backward(relu.backward(ff2.backward(g2)));
  Mat g1 = ln1.backward(gy1);
  auto [gq, gkv] = attn.backward(g1);
  return g1 + gq + gkv;
}

void TransformerBlock::collect(std::vector<Param*>& out) {
  attn.collect(out);
  ln1.collect(out);
  ln2.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

Mat positional_encoding(long length, int dim) {
  Mat pe(length, dim);
  for (long t = 0; t < length; ++t) {
    for (int i = 0; i < dim; i += 2) {
      double div = std::pow(10000.0, static_cast<double>(i) / dim);
      pe(t, i) = std::sin(t / div);
      if (i + 1 < dim) pe(t, i + 1) = std::cos(t / div);
    }
  }
  return pe;
}

// --- losses ----------------------------------------------------------------

LossResult mse_loss(const Mat& pred, const Mat& target) {
  Mat diff = pred - target;
  const double n = static_cast<double>(diff.size());
  return {diff.array().square().sum() / n, 2.0 / n * diff};
}

LossResult l1_loss(const Mat& pred, const Mat& target) {
  Mat diff = pred - target;
  const double n = static_cast<double>(diff.size());
  Mat sign = diff.array().sign();
  return {diff.array().abs().sum() / n, sign / n};
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (long i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

LossResult cross_entropy(const Mat& logits, const std::vector<int>& targets,
                         const std::vector<double>& class_weights) {
  if (static_cast<long>(targets.size()) != logits.rows())
    throw ValidationError("cross_entropy: target length mismatch");
  Mat p = softmax_rows(logits);
  const double n = static_cast<double>(logits.rows());
  double loss = 0.0;
  Mat grad = Mat::Zero(logits.rows(), logits.cols());
  for (long i = 0; i < logits.rows(); ++i) {
    int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols())
      throw ValidationError("cross_entropy: target class out of range");
    double w = class_weights.empty() ? 1.0
                                     : class_weights[static_cast<std::size_t>(y)];
    loss += -w * std::log(std::max(p(i, y), 1e-300));
    grad.row(i) = w / n * p.row(i);
    grad(i, y) -= w / n;
  }
  return {loss / n, grad};
}

// --- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& g : groups_)
    for (Param* p : g.params) {
      m_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t idx = 0;
  for (auto& g : groups_) {
    const double rate = lr * g.lr_mult;
    for (Param* p : g.params) {
      Mat& m = m_[idx];
      Mat& v = v_[idx];
      ++idx;
      m = beta1_ * m + (1.0 - beta1_) * p->grad;
      v = beta2_ * v.array() + (1.0 - beta2_) * p->grad.array().square();
      Mat mhat = m / bc1;
      Mat vhat = v / bc2;
      p->value.array() -= rate * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (Param* p : g.params) p->zero_grad();
}

// --- serialization ---------------------------------------------------------

namespace {
void put_u32s(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32s(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
}  // namespace

std::string serialize_params(const std::vector<Param*>& params) {
  std::string out;
  put_u32s(out, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    put_u32s(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put_u32s(out, static_cast<std::uint32_t>(p->value.rows()));
    put_u32s(out, static_cast<std::uint32_t>(p->value.cols()));
    for (long i = 0; i < p->value.rows(); ++i)
      for (long j = 0; j < p->value.cols(); ++j) {
        std::uint64_t bits;
        double v = p->value(i, j);
        std::memcpy(&bits, &v, 8);
        for (int k = 0; k < 8; ++k)
          out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
      }
  }
  return out;
}

void deserialize_params(const std::string& blob,
                        const std::vector<Param*>& params) {
  std::map<std::string, Param*> by_name;
  for (Param* p : params) by_name[p->name] = p;
  const auto* b = reinterpret_cast<const unsigned char*>(blob.data());
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (off + n > blob.size())
      throw ValidationError("parameter blob truncated");
  };
  need(4);
  std::uint32_t count = get_u32s(b + off);
  off += 4;
  std::size_t matched = 0;
  for (std::uint32_t idx = 0; idx < count; ++idx) {
    need(4);
    std::uint32_t name_len = get_u32s(b + off);
    off += 4;
    need(name_len);
    std::string name(blob, off, name_len);
    off += name_len;
    need(8);
    long rows = get_u32s(b + off), cols = get_u32s(b + off + 4);
    off += 8;
    need(8ULL * rows * cols);
    auto it = by_name.find(name);
    if (it != by_name.end()) {
      Param* p = it->second;
      if (p->value.rows() != rows || p->value.cols() != cols)
        throw ValidationError("parameter shape mismatch for " + name);
      for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) {
          std::uint64_t bits = 0;
          for (int k = 0; k < 8; ++k)
            bits |= std::uint64_t(b[off + 8 * (i * cols + j) + k]) << (8 * k);
          double v;
          std::memcpy(&v, &bits, 8);
          p->value(i, j) = v;
        }
      ++matched;
    }
    off += 8ULL * rows * cols;
  }
  if (matched != params.size())
    throw ValidationError("parameter blob missing entries: matched " +
                          std::to_string(matched) + " of " +
                          std::to_string(params.size()));
}

// --- gradient checking -----------------------------------------------------

double max_relative_grad_error(const std::vector<Param*>& params,
                               const std::function<double()>& loss,
                               double eps, double denom_floor) {
  double worst = 0.0;
  for (Param* p : params) {
    for (long i = 0; i < p->value.rows(); ++i) {
      for (long j = 0; j < p->value.cols(); ++j) {
        const double saved = p->value(i, j);
        p->value(i, j) = saved + eps;
        const double l1 = loss();
        p->value(i, j) = saved - eps;
        const double l2 = loss();
        p->value(i, j) = saved;
        if (!std::isfinite(l1) || !std::isfinite(l2))
          throw RuntimeFailure("non-finite loss during gradient check");
        const double numeric = (l1 - l2) / (2.0 * eps);
        const double analytic = p->grad(i, j);
        const double denom =
            std::max({std::abs(numeric), std::abs(analytic), denom_floor});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
      }
    }
  }
  return worst;
}

}  // namespace spontts::nn
