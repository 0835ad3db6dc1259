#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wmtrig/common/rng.hpp"

namespace wmtrig::victims::nn {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

// Batched feature maps: rows are channels, columns run over
// (sample, row, col) with col fastest.
struct Act {
  int n = 0, h = 0, w = 0;
  Mat m;
  int channels() const { return static_cast<int>(m.rows()); }
};

// Square-kernel 2-D convolution, symmetric zero padding.
struct Conv2d {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  Mat w;  // cout x (cin * k * k), column c * k * k + kh * k + kw
  Vec b;

  static Conv2d create(int cin, int cout, int k, int stride, int pad, Rng& rng);
  int out_size(int in) const { return (in + 2 * pad - k) / stride + 1; }
  size_t parameter_count() const { return w.size() + b.size(); }

  // cols receives the im2col matrix needed by backward.
  Act forward(const Act& x, Mat* cols) const;
  // Returns dL/dx (skipped when need_dx is false) and accumulates dW, db.
  Act backward(const Act& x, const Mat& cols, const Act& dy, Mat& dw, Vec& db, bool need_dx) const;

  // L2 norm of each output channel's filter (bias excluded).
  Vec filter_norms() const;
};

struct Linear {
  Mat w;  // out x in
  Vec b;
  static Linear create(int in, int out, Rng& rng);
  size_t parameter_count() const { return w.size() + b.size(); }
};

void relu_inplace(Mat& m);
// dy *= (y > 0)
void relu_backward(const Mat& y, Mat& dy);

// Per-sample channel means: C x N.
Mat global_avg_pool(const Act& x);
Act global_avg_pool_backward(const Mat& d_pooled, int n, int h, int w);

// Mean softmax cross-entropy over columns of logits (K x B). Writes
// dL/dlogits when grad is non-null.
float softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* grad);
Vec softmax(const Vec& logits);

// Single LSTM layer; gate order i, f, g, o.
struct LstmLayer {
  int in = 0, hidden = 0;
  Mat wx;  // 4H x in
  Mat wh;  // 4H x H
  Vec b;   // 4H, forget-gate slice initialised to 1

  static LstmLayer create(int in, int hidden, Rng& rng);
  size_t parameter_count() const { return wx.size() + wh.size() + b.size(); }

  struct Trace {
    std::vector<Mat> gates;  // activated gates per step, 4H x B
    std::vector<Mat> c;      // cell state per step
    std::vector<Mat> h;      // hidden per step
  };
  // xs: one in x B matrix per time step. Returns hidden states per step.
  std::vector<Mat> forward(const std::vector<Mat>& xs, Trace* trace) const;
  // dh: dL/dh per step. Returns dL/dx per step; accumulates parameter grads.
  std::vector<Mat> backward(const std::vector<Mat>& xs, const Trace& trace, const std::vector<Mat>& dh,
                            Mat& dwx, Mat& dwh, Vec& db) const;
};

}  // namespace wmtrig::victims::nn
