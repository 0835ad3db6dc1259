#include "wmtrig/audio/mel.hpp"

#include <algorithm>
#include <cmath>

#include "wmtrig/common/error.hpp"

namespace wmtrig::audio {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void MelConfig::validate() const {
  stft.validate();
  if (n_mels < 1) throw ConfigError("mel: band count must be >= 1");
  if (sample_rate <= 0) throw ConfigError("mel: sample rate must be positive");
  if (fmin < 0.0 || fmin >= fmax) throw ConfigError("mel: require 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0) throw ConfigError("mel: fmax exceeds the Nyquist frequency");
}

MelFilterbank MelFilterbank::build(const MelConfig& cfg) {
  cfg.validate();
  MelFilterbank fb;
  fb.n_mels = cfg.n_mels;
  fb.bins = cfg.stft.bins();
  fb.weights.assign(static_cast<size_t>(fb.n_mels) * fb.bins, 0.0);

  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));

  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.stft.fft_size;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    double* row = fb.weights.data() + static_cast<size_t>(m) * fb.bins;
    double sum = 0.0;
    for (int k = 0; k < fb.bins; ++k) {
      const double f = k * bin_hz;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      row[k] = std::max(0.0, std::min(up, down));
      sum += row[k];
    }
    if (sum > 0.0) {
      for (int k = 0; k < fb.bins; ++k) row[k] /= sum;
    } else {
      // Filter narrower than one bin: fall back to the nearest bin.
      const int k = std::clamp(static_cast<int>(std::lround(centre / bin_hz)), 0, fb.bins - 1);
      row[k] = 1.0;
    }
  }
  return fb;
}

MelSpectrogram mel_from_stft(const ComplexStft& spec, const MelFilterbank& fb,
                             const MelConfig& cfg) {
  if (spec.bins != fb.bins) throw ShapeError("mel: filterbank/spectrum bin mismatch");
  MelSpectrogram out;
  out.bands = fb.n_mels;
  out.frames = spec.frames;
  out.config = cfg;
  out.values.assign(static_cast<size_t>(out.frames) * out.bands, 0.0);
  std::vector<double> power(spec.bins);
  for (int f = 0; f < spec.frames; ++f) {
    const auto* c = spec.coeffs.data() + static_cast<size_t>(f) * spec.bins;
    for (int k = 0; k < spec.bins; ++k) power[k] = std::norm(c[k]);
    for (int m = 0; m < fb.n_mels; ++m) {
      const double* w = fb.weights.data() + static_cast<size_t>(m) * fb.bins;
      double acc = 0.0;
      for (int k = 0; k < fb.bins; ++k) acc += w[k] * power[k];
      out.values[static_cast<size_t>(f) * out.bands + m] = acc;
    }
  }
  return out;
}

MelSpectrogram mel_spectrogram(std::span<const double> x, const MelConfig& cfg) {
  const MelFilterbank fb = MelFilterbank::build(cfg);
  return mel_from_stft(stft_complex(x, cfg.stft), fb, cfg);
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate)
    throw ConfigError("mel: clip rate does not match mel config rate");
  const auto x = to_double(clip.samples);
  return mel_spectrogram(x, cfg);
}

double to_db(double value) { return 10.0 * std::log10(std::max(value, kDbFloor)); }

std::vector<double> to_db(std::span<const double> values) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](double v) { return to_db(v); });
  return out;
}

}  // namespace wmtrig::audio
