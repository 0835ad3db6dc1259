#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "wmtrig/common/error.hpp"

namespace wmtrig {

// Adam over a flat parameter vector (bias-corrected first and second
// moments, Kingma & Ba defaults).
template <typename Scalar>
class Adam {
 public:
  explicit Adam(size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0), v_(size, 0) {
    if (!(learning_rate > 0)) throw ConfigError("adam: learning rate must be positive");
  }

  void step(std::span<Scalar> params, std::span<const Scalar> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ShapeError("adam: parameter/gradient size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] = static_cast<Scalar>(params[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }

  long steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace wmtrig
