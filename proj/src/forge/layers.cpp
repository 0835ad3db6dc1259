#include "wmtrig/forge/layers.hpp"

#include <cmath>

#include "wmtrig/common/error.hpp"

namespace wmtrig::forge {

LoraAdapter LoraAdapter::create(Eigen::Index rows, Eigen::Index cols, int rank, double scale,
                                Rng& rng) {
  if (rank < 1) throw ConfigError("lora: rank must be >= 1");
  LoraAdapter a;
  a.rank = rank;
  a.scale = scale;
  // Kaiming-uniform style bound on the down projection; up starts at zero so
  // the adapter contributes nothing until trained.
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  a.down.resize(rank, cols);
  for (Eigen::Index i = 0; i < a.down.size(); ++i) a.down.data()[i] = rng.uniform(-bound, bound);
  a.up = Eigen::MatrixXd::Zero(rows, rank);
  return a;
}

LoraGrad AdaptedWeight::adapter_grad(const Eigen::MatrixXd& d_weight) const {
  LoraGrad g;
  g.up = lora->scale * d_weight * lora->down.transpose();
  g.down = lora->scale * lora->up.transpose() * d_weight;
  return g;
}

Conv1d::Conv1d(int in, int out, int kernel, int stride, int pad_left, int pad_right)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_left_(pad_left),
      pad_right_(pad_right) {
  w.base = Eigen::MatrixXd::Zero(out, static_cast<Eigen::Index>(in) * kernel);
  w.bias = Eigen::VectorXd::Zero(out);
}

int Conv1d::output_length(int input_length) const {
  return (input_length + pad_left_ + pad_right_ - kernel_) / stride_ + 1;
}

Eigen::MatrixXd Conv1d::im2col(const Signal& x) const {
  const int len = static_cast<int>(x.cols());
  const int out_len = output_length(len);
  Eigen::MatrixXd cols(static_cast<Eigen::Index>(in_) * kernel_, out_len);
  for (int t = 0; t < out_len; ++t) {
    const int start = t * stride_ - pad_left_;
    for (int c = 0; c < in_; ++c) {
      for (int k = 0; k < kernel_; ++k) {
        const int src = start + k;
        cols(c * kernel_ + k, t) = (src >= 0 && src < len) ? x(c, src) : 0.0;
      }
    }
  }
  return cols;
}

Signal Conv1d::forward(const Signal& x, bool use_adapter) const {
  if (x.rows() != in_) throw ShapeError("conv1d: input channel mismatch");
  if (output_length(static_cast<int>(x.cols())) < 1) throw ShapeError("conv1d: input too short");
  const Eigen::MatrixXd cols = im2col(x);
  Signal y = (use_adapter ? w.effective() : w.base) * cols;
  y.colwise() += w.bias;
  return y;
}

Signal Conv1d::backward(const Signal& x, const Signal& d_out, Eigen::MatrixXd* d_weight,
                        bool need_input_grad) const {
  const int len = static_cast<int>(x.cols());
  if (d_weight) *d_weight = d_out * im2col(x).transpose();
  if (!need_input_grad) return {};
  const Eigen::MatrixXd d_cols = w.effective().transpose() * d_out;
  Signal dx = Signal::Zero(in_, len);
  for (Eigen::Index t = 0; t < d_cols.cols(); ++t) {
    const int start = static_cast<int>(t) * stride_ - pad_left_;
    for (int c = 0; c < in_; ++c) {
      for (int k = 0; k < kernel_; ++k) {
        const int dst = start + k;
        if (dst >= 0 && dst < len) dx(c, dst) += d_cols(c * kernel_ + k, t);
      }
    }
  }
  return dx;
}

ConvTranspose1d::ConvTranspose1d(int in, int out, int kernel, int stride, int crop_left,
                                 int crop_right)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), crop_left_(crop_left),
      crop_right_(crop_right) {
  w.base = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out) * kernel, in);
  w.bias = Eigen::VectorXd::Zero(out);
}

int ConvTranspose1d::output_length(int input_length) const {
  return (input_length - 1) * stride_ + kernel_ - crop_left_ - crop_right_;
}

Signal ConvTranspose1d::forward(const Signal& x, bool use_adapter) const {
  if (x.rows() != in_) throw ShapeError("conv_transpose1d: input channel mismatch");
  const int in_len = static_cast<int>(x.cols());
  const int out_len = output_length(in_len);
  if (out_len < 1) throw ShapeError("conv_transpose1d: input too short");
  const Eigen::MatrixXd cols = (use_adapter ? w.effective() : w.base) * x;
  Signal y(out_, out_len);
  for (int o = 0; o < out_; ++o) y.row(o).setConstant(w.bias(o));
  for (int t = 0; t < in_len; ++t) {
    for (int o = 0; o < out_; ++o) {
      for (int k = 0; k < kernel_; ++k) {
        const int dst = t * stride_ + k - crop_left_;
        if (dst >= 0 && dst < out_len) y(o, dst) += cols(o * kernel_ + k, t);
      }
    }
  }
  return y;
}

Signal ConvTranspose1d::backward(const Signal& x, const Signal& d_out,
                                 Eigen::MatrixXd* d_weight, bool need_input_grad) const {
  const int in_len = static_cast<int>(x.cols());
  const int out_len = static_cast<int>(d_out.cols());
  Eigen::MatrixXd d_cols(static_cast<Eigen::Index>(out_) * kernel_, in_len);
  for (int t = 0; t < in_len; ++t) {
    for (int o = 0; o < out_; ++o) {
      for (int k = 0; k < kernel_; ++k) {
        const int src = t * stride_ + k - crop_left_;
        d_cols(o * kernel_ + k, t) = (src >= 0 && src < out_len) ? d_out(o, src) : 0.0;
      }
    }
  }
  if (d_weight) *d_weight = d_cols * x.transpose();
  if (!need_input_grad) return {};
  return w.effective().transpose() * d_cols;
}

}  // namespace wmtrig::forge
