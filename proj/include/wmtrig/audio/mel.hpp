#pragma once

#include <span>
#include <vector>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/audio/stft.hpp"

namespace wmtrig::audio {

inline constexpr double kDbFloor = 1e-10;

struct MelConfig {
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  int sample_rate = kCanonicalRate;
  StftConfig stft{1024, 256};

  void validate() const;
};

// Triangular filters spaced uniformly on the HTK mel scale, each normalised
// to unit sum over FFT bins. Row-major: weights[m * bins + k].
struct MelFilterbank {
  int n_mels = 0;
  int bins = 0;
  std::vector<double> weights;

  static MelFilterbank build(const MelConfig& cfg);
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Frame-major like Spectrogram: values[f * bands + m].
struct MelSpectrogram {
  int bands = 0;
  int frames = 0;
  MelConfig config;
  std::vector<double> values;

  double at(int band, int frame) const { return values[static_cast<size_t>(frame) * bands + band]; }
};

// Filterbank applied to the power spectrogram |X|^2.
MelSpectrogram mel_spectrogram(std::span<const double> x, const MelConfig& cfg);
MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg);
MelSpectrogram mel_from_stft(const ComplexStft& spec, const MelFilterbank& fb, const MelConfig& cfg);

// 10 * log10(max(v, 1e-10)).
double to_db(double value);
std::vector<double> to_db(std::span<const double> values);

}  // namespace wmtrig::audio
