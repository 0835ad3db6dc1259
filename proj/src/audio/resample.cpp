#include "wmtrig/audio/resample.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "wmtrig/common/error.hpp"

namespace wmtrig::audio {

std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ConfigError("resample: rates must be positive");
  if (from_rate == to_rate) return {x.begin(), x.end()};
  const int g = std::gcd(from_rate, to_rate);
  const long up = to_rate / g;
  const long down = from_rate / g;
  const long width = std::max(up, down);
  const double cutoff = 0.5 / static_cast<double>(width);  // cycles per upsampled sample
  const long half = 10 * width;
  constexpr double kBeta = 5.0;
  const double norm = std::cyl_bessel_i(0.0, kBeta);

  std::vector<double> taps(2 * half + 1);
  for (long n = -half; n <= half; ++n) {
    const double t = static_cast<double>(n);
    const double arg = 2.0 * cutoff * t;
    const double sinc = n == 0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = t / static_cast<double>(half);
    const double win = std::cyl_bessel_i(0.0, kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    taps[n + half] = 2.0 * cutoff * static_cast<double>(up) * sinc * win;
  }

  const long n_in = static_cast<long>(x.size());
  const long n_out = (n_in * up + down - 1) / down;
  std::vector<double> y(n_out, 0.0);
  for (long m = 0; m < n_out; ++m) {
    const long t = m * down;  // position on the upsampled grid
    // x[n] sits at n * up; need |t - n * up| <= half
    long n_lo = (t - half + up - 1) / up;
    if (t - half < 0) n_lo = -((half - t) / up);
    const long n_hi = (t + half) / up;
    double acc = 0.0;
    for (long n = std::max(0L, n_lo); n <= std::min(n_in - 1, n_hi); ++n)
      acc += x[n] * taps[t - n * up + half];
    y[m] = acc;
  }
  return y;
}

}  // namespace wmtrig::audio
