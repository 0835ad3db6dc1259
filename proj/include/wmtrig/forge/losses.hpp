#pragma once

#include <span>
#include <vector>

#include "wmtrig/audio/mel.hpp"
#include "wmtrig/audio/stft.hpp"

namespace wmtrig::forge {

// A batch of waveforms or residuals. Clips may differ in length; every term
// below averages over all elements pooled across the batch.
using Batch = std::vector<std::vector<double>>;

inline constexpr double kLogEps = 1e-7;

struct LossWeights {
  double sup = 20000.0;
  double stft = 10.0;
  double mel = 10.0;
  double amp = 0.1;
  void validate() const;
};

struct LossBundle {
  double sup = 0.0;
  double stft = 0.0;
  double mel = 0.0;
  double amp = 0.0;
  double total = 0.0;
};

// fft {1024, 512, 256}, hop fft/4, Hann.
std::vector<audio::StftConfig> default_resolutions();

// mean |pred - target|
double supervised_loss(const Batch& pred, const Batch& target);
// Average over resolutions of mean|M^ - M| + mean|log(M^ + eps) - log(M + eps)|.
double multiscale_stft_loss(const Batch& x_hat, const Batch& x,
                            std::span<const audio::StftConfig> resolutions);
// mean |dB(mel(x^)) - dB(mel(x))|
double logmel_loss(const Batch& x_hat, const Batch& x, const audio::MelConfig& mel = {});
// sum w^2 / (number of elements)
double amplitude_reg(const Batch& residual);

LossBundle total_loss(double sup, double stft, double mel, double amp, const LossWeights& w);

struct LossSpec {
  LossWeights weights;
  std::vector<audio::StftConfig> resolutions = default_resolutions();
  audio::MelConfig mel;
  void validate() const;
};

// One training example for the joint objective: the clean carrier x, the
// generator's residual w^ and the fixed target w_p. The spectral and
// perceptual terms compare x + w^ against x.
struct JointSample {
  std::span<const double> clean;
  std::span<const double> residual;
  std::span<const double> target;
};

// Evaluates every term of the weighted objective on a batch. When
// grad_residual is non-null it receives dTotal/dw^ for each sample.
LossBundle joint_loss(std::span<const JointSample> batch, const LossSpec& spec,
                      Batch* grad_residual = nullptr);

}  // namespace wmtrig::forge
