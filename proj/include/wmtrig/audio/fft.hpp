#pragma once

#include <complex>
#include <span>

namespace wmtrig::audio {

// Real-input FFT of a fixed size backed by FFTW. Instances are cached per
// thread; use RealFft::get(n).
class RealFft {
 public:
  static const RealFft& get(int n);

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft();

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  // out[k] = sum_n in[n] exp(-2 pi i k n / N), k = 0..N/2.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const;

  // Unnormalised half-spectrum inverse: out[n] = sum over the full
  // Hermitian extension of in. Imaginary parts of in[0] and in[N/2] are
  // ignored.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

 private:
  explicit RealFft(int n);
  struct Impl;
  int n_;
  Impl* impl_;
};

}  // namespace wmtrig::audio
