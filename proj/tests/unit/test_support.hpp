#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace test_support {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "wmtrig") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// O(N^2) DFT, independent of FFTW.
inline std::vector<std::complex<double>> direct_dft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / n;
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

inline std::vector<double> hann_periodic(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

// Centred, reflect-padded frame `f` of x, windowed.
inline std::vector<double> centred_frame(const std::vector<double>& x, int n_fft, int hop, int f,
                                         const std::vector<double>& win) {
  const int len = static_cast<int>(x.size());
  std::vector<double> frame(n_fft);
  for (int i = 0; i < n_fft; ++i) {
    int j = f * hop - n_fft / 2 + i;
    if (j < 0) j = -j;
    if (j >= len) j = 2 * (len - 1) - j;
    frame[i] = win[i] * x[j];
  }
  return frame;
}

inline std::vector<double> white_noise(size_t n, double rms, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> d(0.0, rms);
  std::vector<double> v(n);
  for (auto& s : v) s = d(gen);
  return v;
}

inline std::vector<double> sine(size_t n, double freq, double rate, double amp = 1.0) {
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate);
  return v;
}

// Voiced-like test signal: a few harmonics of a 140 Hz fundamental under a
// syllabic envelope, plus a little noise. Peak stays well inside [-1, 1].
inline std::vector<double> speechlike(size_t n, unsigned seed, double rate = 16000.0) {
  std::vector<double> v = white_noise(n, 0.005, seed);
  for (size_t i = 0; i < n; ++i) {
    const double t = i / rate;
    const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * 3.0 * t);
    double s = 0.0;
    for (int h = 1; h <= 6; ++h) s += std::sin(2.0 * std::numbers::pi * 140.0 * h * t + h) / h;
    v[i] += 0.12 * env * s;
  }
  return v;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace test_support
