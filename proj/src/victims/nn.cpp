#include "wmtrig/victims/nn.hpp"

#include <cmath>

#include "wmtrig/common/error.hpp"

namespace wmtrig::victims::nn {
namespace {

Mat he_normal(int rows, int cols, int fan_in, Rng& rng) {
  Mat m(rows, cols);
  const double sd = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(sd * rng.normal());
  return m;
}

float sigmoidf(float v) { return 1.0f / (1.0f + std::exp(-v)); }

}  // namespace

Conv2d Conv2d::create(int cin, int cout, int k, int stride, int pad, Rng& rng) {
  Conv2d c;
  c.cin = cin;
  c.cout = cout;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.w = he_normal(cout, cin * k * k, cin * k * k, rng);
  c.b = Vec::Zero(cout);
  return c;
}

Act Conv2d::forward(const Act& x, Mat* cols_out) const {
  if (x.channels() != cin)
    throw ShapeError("conv2d: expected " + std::to_string(cin) + " input channels, got " +
                     std::to_string(x.channels()));
  const int ho = out_size(x.h), wo = out_size(x.w);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input too small");
  const int kk = k * k;
  Mat cols(cin * kk, static_cast<Eigen::Index>(x.n) * ho * wo);
  const float* src = x.m.data();
  for (int n = 0; n < x.n; ++n)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        float* col = cols.col((static_cast<Eigen::Index>(n) * ho + oh) * wo + ow).data();
        for (int kh = 0; kh < k; ++kh) {
          const int ih = oh * stride - pad + kh;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = ow * stride - pad + kw;
            const bool inside = ih >= 0 && ih < x.h && iw >= 0 && iw < x.w;
            const float* px = inside ? src + ((static_cast<size_t>(n) * x.h + ih) * x.w + iw) * cin : nullptr;
            for (int c = 0; c < cin; ++c) col[c * kk + kh * k + kw] = inside ? px[c] : 0.0f;
          }
        }
      }
  Act y{x.n, ho, wo, Mat()};
  y.m.noalias() = w * cols;
  y.m.colwise() += b;
  if (cols_out) *cols_out = std::move(cols);
  return y;
}

Act Conv2d::backward(const Act& x, const Mat& cols, const Act& dy, Mat& dw, Vec& db, bool need_dx) const {
  dw.noalias() += dy.m * cols.transpose();
  db += dy.m.rowwise().sum();
  Act dx{x.n, x.h, x.w, Mat()};
  if (!need_dx) return dx;
  const Mat dcols = w.transpose() * dy.m;
  dx.m = Mat::Zero(cin, static_cast<Eigen::Index>(x.n) * x.h * x.w);
  const int kk = k * k;
  float* dst = dx.m.data();
  for (int n = 0; n < x.n; ++n)
    for (int oh = 0; oh < dy.h; ++oh)
      for (int ow = 0; ow < dy.w; ++ow) {
        const float* col = dcols.col((static_cast<Eigen::Index>(n) * dy.h + oh) * dy.w + ow).data();
        for (int kh = 0; kh < k; ++kh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= x.h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= x.w) continue;
            float* px = dst + ((static_cast<size_t>(n) * x.h + ih) * x.w + iw) * cin;
            for (int c = 0; c < cin; ++c) px[c] += col[c * kk + kh * k + kw];
          }
        }
      }
  return dx;
}

Vec Conv2d::filter_norms() const { return w.rowwise().norm(); }

Linear Linear::create(int in, int out, Rng& rng) {
  Linear l;
  l.w = Mat(out, in);
  const double sd = 1.0 / std::sqrt(in);
  for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = static_cast<float>(sd * rng.normal());
  l.b = Vec::Zero(out);
  return l;
}

void relu_inplace(Mat& m) { m = m.cwiseMax(0.0f); }

void relu_backward(const Mat& y, Mat& dy) { dy = (y.array() > 0.0f).select(dy, 0.0f); }

Mat global_avg_pool(const Act& x) {
  const int hw = x.h * x.w;
  Mat out(x.channels(), x.n);
  for (int n = 0; n < x.n; ++n) out.col(n) = x.m.middleCols(static_cast<Eigen::Index>(n) * hw, hw).rowwise().mean();
  return out;
}

Act global_avg_pool_backward(const Mat& d_pooled, int n, int h, int w) {
  const int hw = h * w;
  Act dx{n, h, w, Mat(d_pooled.rows(), static_cast<Eigen::Index>(n) * hw)};
  for (int i = 0; i < n; ++i)
    dx.m.middleCols(static_cast<Eigen::Index>(i) * hw, hw).colwise() = d_pooled.col(i) / static_cast<float>(hw);
  return dx;
}

Vec softmax(const Vec& logits) {
  const float mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp();
  return e / e.sum();
}

float softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* grad) {
  const Eigen::Index batch = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch) throw ShapeError("cross-entropy: label count mismatch");
  double loss = 0.0;
  if (grad) grad->resize(logits.rows(), batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const Vec p = softmax(logits.col(j));
    loss -= std::log(std::max(p[labels[j]], 1e-30f));
    if (grad) {
      grad->col(j) = p / static_cast<float>(batch);
      (*grad)(labels[j], j) -= 1.0f / static_cast<float>(batch);
    }
  }
  return static_cast<float>(loss / static_cast<double>(batch));
}

LstmLayer LstmLayer::create(int in, int hidden, Rng& rng) {
  LstmLayer l;
  l.in = in;
  l.hidden = hidden;
  const double s = 1.0 / std::sqrt(hidden);
  l.wx = Mat(4 * hidden, in);
  l.wh = Mat(4 * hidden, hidden);
  for (Eigen::Index i = 0; i < l.wx.size(); ++i) l.wx.data()[i] = static_cast<float>(rng.uniform(-s, s));
  for (Eigen::Index i = 0; i < l.wh.size(); ++i) l.wh.data()[i] = static_cast<float>(rng.uniform(-s, s));
  l.b = Vec::Zero(4 * hidden);
  l.b.segment(hidden, hidden).setOnes();
  return l;
}

std::vector<Mat> LstmLayer::forward(const std::vector<Mat>& xs, Trace* trace) const {
  const int H = hidden;
  const Eigen::Index B = xs.empty() ? 0 : xs[0].cols();
  Mat h = Mat::Zero(H, B), c = Mat::Zero(H, B);
  std::vector<Mat> hs;
  hs.reserve(xs.size());
  if (trace) *trace = {};
  for (const Mat& x : xs) {
    Mat g = wx * x;
    g.noalias() += wh * h;
    g.colwise() += b;
    auto gi = g.middleRows(0, H), gf = g.middleRows(H, H), gg = g.middleRows(2 * H, H), go = g.middleRows(3 * H, H);
    gi = gi.unaryExpr(&sigmoidf);
    gf = gf.unaryExpr(&sigmoidf);
    gg = gg.array().tanh().matrix();
    go = go.unaryExpr(&sigmoidf);
    c = (gf.array() * c.array() + gi.array() * gg.array()).matrix();
    h = (go.array() * c.array().tanh()).matrix();
    hs.push_back(h);
    if (trace) {
      trace->gates.push_back(g);
      trace->c.push_back(c);
      trace->h.push_back(h);
    }
  }
  return hs;
}

std::vector<Mat> LstmLayer::backward(const std::vector<Mat>& xs, const Trace& tr, const std::vector<Mat>& dh_in,
                                     Mat& dwx, Mat& dwh, Vec& db) const {
  const int H = hidden;
  const size_t T = xs.size();
  const Eigen::Index B = T ? xs[0].cols() : 0;
  std::vector<Mat> dxs(T);
  Mat dh_next = Mat::Zero(H, B), dc_next = Mat::Zero(H, B);
  Mat dg(4 * H, B);
  for (size_t step = T; step-- > 0;) {
    const Mat& g = tr.gates[step];
    const auto i = g.middleRows(0, H).array(), f = g.middleRows(H, H).array();
    const auto gg = g.middleRows(2 * H, H).array(), o = g.middleRows(3 * H, H).array();
    const Eigen::ArrayXXf tc = tr.c[step].array().tanh();
    const Eigen::ArrayXXf dh = (dh_in[step] + dh_next).array();
    const Eigen::ArrayXXf dc = dc_next.array() + dh * o * (1.0f - tc.square());
    const Mat c_prev = step > 0 ? tr.c[step - 1] : Mat::Zero(H, B);
    const Mat h_prev = step > 0 ? tr.h[step - 1] : Mat::Zero(H, B);
    dg.middleRows(0, H) = (dc * gg * i * (1.0f - i)).matrix();
    dg.middleRows(H, H) = (dc * c_prev.array() * f * (1.0f - f)).matrix();
    dg.middleRows(2 * H, H) = (dc * i * (1.0f - gg.square())).matrix();
    dg.middleRows(3 * H, H) = (dh * tc * o * (1.0f - o)).matrix();
    dwx.noalias() += dg * xs[step].transpose();
    dwh.noalias() += dg * h_prev.transpose();
    db += dg.rowwise().sum();
    dxs[step].noalias() = wx.transpose() * dg;
    dh_next.noalias() = wh.transpose() * dg;
    dc_next = (dc * f).matrix();
  }
  return dxs;
}

}  // namespace wmtrig::victims::nn
