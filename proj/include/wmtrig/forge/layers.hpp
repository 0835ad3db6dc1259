#pragma once

#include <optional>

#include <Eigen/Dense>

#include "wmtrig/common/rng.hpp"

namespace wmtrig::forge {

// Signals are channels x time.
using Signal = Eigen::MatrixXd;

// Low-rank update W + scale * up * down on a 2-D weight view.
struct LoraAdapter {
  int rank = 0;
  double scale = 1.0;
  Eigen::MatrixXd down;  // rank x cols, random init
  Eigen::MatrixXd up;    // rows x rank, zero init

  static LoraAdapter create(Eigen::Index rows, Eigen::Index cols, int rank, double scale, Rng& rng);
  Eigen::MatrixXd delta() const { return scale * up * down; }
};

struct LoraGrad {
  Eigen::MatrixXd down;
  Eigen::MatrixXd up;
};

// Frozen base weight with an optional trainable adapter.
struct AdaptedWeight {
  Eigen::MatrixXd base;
  Eigen::VectorXd bias;
  std::optional<LoraAdapter> lora;

  Eigen::MatrixXd effective() const { return lora ? Eigen::MatrixXd(base + lora->delta()) : base; }
  // Chain rule from dL/dW_effective to the adapter factors.
  LoraGrad adapter_grad(const Eigen::MatrixXd& d_weight) const;
};

// 1-D convolution. Weight view is out x (in * kernel), column c * kernel + k.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int in, int out, int kernel, int stride, int pad_left, int pad_right);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int output_length(int input_length) const;

  Signal forward(const Signal& x, bool use_adapter = true) const;
  // Returns dL/dx; writes dL/dW_effective into d_weight when non-null.
  Signal backward(const Signal& x, const Signal& d_out, Eigen::MatrixXd* d_weight,
                  bool need_input_grad = true) const;

  AdaptedWeight w;

 private:
  Eigen::MatrixXd im2col(const Signal& x) const;
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_left_ = 0, pad_right_ = 0;
};

// Transposed 1-D convolution (upsampling). Weight view is (out * kernel) x in,
// row o * kernel + k. The full-length output is cropped by crop_left and
// crop_right samples.
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(int in, int out, int kernel, int stride, int crop_left, int crop_right);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_length(int input_length) const;

  Signal forward(const Signal& x, bool use_adapter = true) const;
  Signal backward(const Signal& x, const Signal& d_out, Eigen::MatrixXd* d_weight,
                  bool need_input_grad = true) const;

  AdaptedWeight w;

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, crop_left_ = 0, crop_right_ = 0;
};

}  // namespace wmtrig::forge
