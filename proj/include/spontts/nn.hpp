#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "spontts/util.hpp"

// Small reverse-mode layer library. Each layer caches the activations of its
// most recent forward() and consumes them in backward(); gradients accumulate
// into Param::grad, so callers zero grads between steps. Everything runs in
// double precision and single-threaded so runs are bit-reproducible.
namespace spontts::nn {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

Mat xavier_init(long rows, long cols, std::mt19937_64& rng);

// y = x W + b, x: T x in
struct Linear {
  Param W, b;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);
  void collect(std::vector<Param*>& out);

 private:
  Mat x_;
};

struct Embedding {
  Param table;  // V x d
  Embedding(const std::string& name, int vocab, int dim, std::mt19937_64& rng);
  Mat forward(const std::vector<int>& ids);
  void backward(const Mat& gy);
  void collect(std::vector<Param*>& out);

 private:
  std::vector<int> ids_;
};

// 1-D convolution over the time axis with zero padding (k-1)/2 and stride;
// output length ceil(T / stride). Never errors on short input.
struct Conv1d {
  Param W;  // (k*in) x out
  Param b;
  int kernel, stride, in_ch, out_ch;
  Conv1d(const std::string& name, int in, int out, int kernel, int stride,
         std::mt19937_64& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);
  void collect(std::vector<Param*>& out);

 private:
  Mat cols_;  // im2col cache
  long t_in_ = 0;
};

struct ReLU {
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);

 private:
  Mat mask_;
};

struct LayerNorm {
  Param gamma, beta;
  double eps = 1e-6;
  LayerNorm(const std::string& name, int dim);
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);
  void collect(std::vector<Param*>& out);

 private:
  Mat xhat_;
  Eigen::VectorXd inv_std_;
};

// Single-direction LSTM; gate order [i, f, g, o].
struct LSTM {
  Param Wx, Wh, b;
  int in_dim, hidden;
  bool reverse;
  LSTM(const std::string& name, int in, int hidden, bool reverse,
       std::mt19937_64& rng);
  Mat forward(const Mat& x);   // T x hidden
  Mat backward(const Mat& gy);  // T x in
  void collect(std::vector<Param*>& out);

 private:
  Mat x_, gi_, gf_, gg_, go_, c_, h_, tanh_c_;
};

struct BiLSTM {
  LSTM fwd, bwd;
  BiLSTM(const std::string& name, int in, int hidden, std::mt19937_64& rng);
  Mat forward(const Mat& x);   // T x 2*hidden
  Mat backward(const Mat& gy);
  void collect(std::vector<Param*>& out);
};

struct GRU {
  Param Wx, Wh, bx, bh;  // gate order [r, z, n]
  int in_dim, hidden;
  GRU(const std::string& name, int in, int hidden, std::mt19937_64& rng);
  Mat forward(const Mat& x);        // T x hidden (all states)
  Mat backward(const Mat& gy);      // T x in
  void collect(std::vector<Param*>& out);

 private:
  Mat x_, r_, z_, n_, h_, u_;  // u = h_{t-1} Wh_n + bh_n
};

// Multi-head attention; key_mask marks valid key rows. Masked keys receive
// exactly zero weight (softmax is taken over the unmasked subset only).
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int dim, heads;
  MultiHeadAttention(const std::string& name, int dim, int heads,
                     std::mt19937_64& rng);
  Mat forward(const Mat& query_in, const Mat& kv_in,
              const std::vector<bool>& key_mask);
  // returns {grad wrt query_in, grad wrt kv_in}
  std::pair<Mat, Mat> backward(const Mat& gy);
  void collect(std::vector<Param*>& out);

  // per-head weights of the last forward, each n x m
  const std::vector<Mat>& last_attention() const { return attn_; }

 private:
  std::vector<Mat> q_, k_, v_, attn_, ctx_;
  std::vector<bool> key_mask_;
  Mat concat_;
};

// Post-LN transformer block: self-attention + residual + LN, then a
// position-wise feed-forward + residual + LN.
struct TransformerBlock {
  MultiHeadAttention attn;
  LayerNorm ln1, ln2;
  Linear ff1, ff2;
  ReLU relu;
  TransformerBlock(const std::string& name, int dim, int heads, int ff_dim,
                   std::mt19937_64& rng);
  Mat forward(const Mat& x, const std::vector<bool>& mask);
  Mat backward(const Mat& gy);
  void collect(std::vector<Param*>& out);
};

Mat positional_encoding(long length, int dim);

// --- losses (mean-reduced over unmasked entries) ---------------------------

struct LossResult {
  double value = 0.0;
  Mat grad;  // wrt the predictions
};

LossResult mse_loss(const Mat& pred, const Mat& target);
LossResult l1_loss(const Mat& pred, const Mat& target);

// Row-wise softmax cross-entropy with optional per-class weights; targets are
// class indices. Returns mean loss over rows and grad wrt logits.
LossResult cross_entropy(const Mat& logits, const std::vector<int>& targets,
                         const std::vector<double>& class_weights = {});

Mat softmax_rows(const Mat& logits);

// --- optimizer -------------------------------------------------------------

struct ParamGroup {
  std::string name;
  std::vector<Param*> params;
  double lr_mult = 1.0;
};

class Adam {
 public:
  Adam(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.98,
       double eps = 1e-9);
  void step(double lr);  // effective rate = lr * group.lr_mult
  void zero_grad();
  long steps_taken() const { return t_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

 private:
  std::vector<ParamGroup> groups_;
  std::vector<Mat> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Named-parameter blob: for each param, name + shape + little-endian f64
// values. deserialize matches by name and verifies shapes.
std::string serialize_params(const std::vector<Param*>& params);
void deserialize_params(const std::string& blob,
                        const std::vector<Param*>& params);

// Central finite differences over every entry of `params`, compared against
// the analytic gradients currently stored in Param::grad. `loss` must be a
// pure forward evaluation. Returns the max relative error.
double max_relative_grad_error(const std::vector<Param*>& params,
                               const std::function<double()>& loss,
                               double eps = 1e-5, double denom_floor = 1e-6);

}  // namespace spontts::nn
