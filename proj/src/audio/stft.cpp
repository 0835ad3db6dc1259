#include "wmtrig/audio/stft.hpp"

#include <cmath>
#include <numbers>

#include "wmtrig/audio/fft.hpp"
#include "wmtrig/common/error.hpp"

namespace wmtrig::audio {
namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

void check_length(int length, const StftConfig& cfg) {
  if (length <= cfg.fft_size / 2)
    throw ShapeError("stft: signal of " + std::to_string(length) +
                     " samples is too short for fft_size " + std::to_string(cfg.fft_size));
}

}  // namespace

void StftConfig::validate() const {
  if (!is_pow2(fft_size) || fft_size < 32)
    throw ConfigError("stft: fft_size must be a power of two >= 32");
  if (hop <= 0 || hop > fft_size) throw ConfigError("stft: hop must be in [1, fft_size]");
  if (window_length() > fft_size) throw ConfigError("stft: window longer than fft_size");
}

std::vector<double> make_window(const StftConfig& cfg) {
  const int n = cfg.fft_size;
  const int w = cfg.window_length();
  std::vector<double> win(n, 0.0);
  const int offset = (n - w) / 2;
  for (int i = 0; i < w; ++i) {
    win[offset + i] = cfg.window == WindowType::kHann
                          ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / w)
                          : 1.0;
  }
  return win;
}

ComplexStft stft_complex(std::span<const double> x, const StftConfig& cfg) {
  cfg.validate();
  const int length = static_cast<int>(x.size());
  check_length(length, cfg);
  const int n = cfg.fft_size;
  const int pad = n / 2;
  const auto win = make_window(cfg);
  const RealFft& fft = RealFft::get(n);

  ComplexStft out;
  out.bins = cfg.bins();
  out.frames = cfg.frame_count(length);
  out.coeffs.resize(static_cast<size_t>(out.frames) * out.bins);
  std::vector<double> frame(n);
  for (int f = 0; f < out.frames; ++f) {
    const int start = f * cfg.hop - pad;
    for (int i = 0; i < n; ++i) frame[i] = win[i] * x[reflect(start + i, length)];
    fft.forward(frame, std::span(out.coeffs).subspan(static_cast<size_t>(f) * out.bins, out.bins));
  }
  return out;
}

Spectrogram stft(std::span<const double> x, const StftConfig& cfg) {
  const ComplexStft c = stft_complex(x, cfg);
  Spectrogram s;
  s.bins = c.bins;
  s.frames = c.frames;
  s.config = cfg;
  s.magnitudes.resize(c.coeffs.size());
  for (size_t i = 0; i < c.coeffs.size(); ++i) s.magnitudes[i] = std::abs(c.coeffs[i]);
  return s;
}

Spectrogram stft(const AudioClip& clip, const StftConfig& cfg) {
  const auto x = to_double(clip.samples);
  return stft(x, cfg);
}

std::vector<double> stft_backward(const ComplexStft& z, int length, const StftConfig& cfg) {
  cfg.validate();
  check_length(length, cfg);
  const int n = cfg.fft_size;
  const int pad = n / 2;
  const int bins = cfg.bins();
  if (z.bins != bins || z.frames != cfg.frame_count(length))
    throw ShapeError("stft_backward: coefficient shape does not match config");
  const auto win = make_window(cfg);
  const RealFft& fft = RealFft::get(n);

  std::vector<double> grad(length, 0.0);
  std::vector<std::complex<double>> half(bins);
  std::vector<double> frame(n);
  for (int f = 0; f < z.frames; ++f) {
    const auto* zf = z.coeffs.data() + static_cast<size_t>(f) * bins;
    // Re(sum_{k=0}^{N/2} Z_k e^{+i..}) via the Hermitian c2r transform: the
    // interior bins appear twice in the Hermitian sum, the edge bins once.
    half[0] = {zf[0].real(), 0.0};
    half[bins - 1] = {zf[bins - 1].real(), 0.0};
    for (int k = 1; k < bins - 1; ++k) half[k] = 0.5 * zf[k];
    fft.inverse(half, frame);
    const int start = f * cfg.hop - pad;
    for (int i = 0; i < n; ++i) {
      if (win[i] == 0.0) continue;
      grad[reflect(start + i, length)] += win[i] * frame[i];
    }
  }
  return grad;
}

}  // namespace wmtrig::audio
