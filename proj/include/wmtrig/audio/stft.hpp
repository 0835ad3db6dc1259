#pragma once

#include <complex>
#include <span>
#include <vector>

#include "wmtrig/audio/clip.hpp"

namespace wmtrig::audio {

enum class WindowType { kHann, kRectangular };

struct StftConfig {
  int fft_size = 1024;
  int hop = 256;
  int win_length = 0;  // 0 means fft_size; shorter windows are zero-padded to the centre
  WindowType window = WindowType::kHann;

  int window_length() const { return win_length > 0 ? win_length : fft_size; }
  int bins() const { return fft_size / 2 + 1; }
  // Frames produced for a signal of `length` samples under centred framing.
  int frame_count(int length) const { return 1 + length / hop; }
  void validate() const;
};

// Periodic window of window_length() taps, centred inside fft_size.
std::vector<double> make_window(const StftConfig& cfg);

// Magnitude spectrogram. Storage is frame-major: magnitudes[f * bins + k].
struct Spectrogram {
  int bins = 0;
  int frames = 0;
  StftConfig config;
  std::vector<double> magnitudes;

  double at(int bin, int frame) const { return magnitudes[static_cast<size_t>(frame) * bins + bin]; }
};

// Complex one-sided STFT coefficients, frame-major like Spectrogram.
struct ComplexStft {
  int bins = 0;
  int frames = 0;
  std::vector<std::complex<double>> coeffs;
};

// Centred STFT: the signal is reflect-padded by fft_size/2 on each side and
// framed every `hop` samples. Signals of fft_size/2 samples or fewer cannot
// be reflect-padded and are rejected.
ComplexStft stft_complex(std::span<const double> x, const StftConfig& cfg);
Spectrogram stft(std::span<const double> x, const StftConfig& cfg);
Spectrogram stft(const AudioClip& clip, const StftConfig& cfg);

// Adjoint of stft_complex with respect to real-valued objectives: given
// per-bin complex weights Z (frame-major, one-sided), returns
//   dx[t] = sum over frames of window[n] * Re(sum_k Z[k] exp(+2 pi i k n / N))
// folded back through the reflect padding. With Z = dL/d|X| * X/|X| this is
// the gradient of L with respect to x through the magnitude spectrogram.
std::vector<double> stft_backward(const ComplexStft& z, int length, const StftConfig& cfg);

}  // namespace wmtrig::audio
