#include "wmtrig/scorecard/stoi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include "wmtrig/audio/fft.hpp"
#include "wmtrig/audio/resample.hpp"
#include "wmtrig/common/error.hpp"

namespace wmtrig::scorecard {
namespace {

constexpr int kFrame = 256;
constexpr int kFft = 512;
constexpr int kBands = 15;
constexpr double kMinFreq = 150.0;
constexpr int kSegment = 30;
constexpr double kBeta = -15.0;
constexpr double kDynRange = 40.0;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Hann of length n + 2 with the zero end points dropped.
std::vector<double> inner_hann(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  return w;
}

// Drops frames where the clean signal is more than kDynRange dB below its
// loudest frame and overlap-adds the survivors.
void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const int hop = kFrame / 2;
  const auto w = inner_hann(kFrame);
  const int len = static_cast<int>(x.size());
  std::vector<int> starts;
  for (int i = 0; i + kFrame <= len; i += hop) starts.push_back(i);
  std::vector<double> energy(starts.size());
  for (size_t f = 0; f < starts.size(); ++f) {
    double s = 0.0;
    for (int n = 0; n < kFrame; ++n) {
      const double v = w[n] * x[starts[f] + n];
      s += v * v;
    }
    energy[f] = 20.0 * std::log10(std::sqrt(s) + kEps);
  }
  const double top = energy.empty() ? 0.0 : *std::max_element(energy.begin(), energy.end());
  std::vector<int> keep;
  for (size_t f = 0; f < starts.size(); ++f)
    if (top - kDynRange - energy[f] < 0.0) keep.push_back(starts[f]);
  const size_t out_len = keep.empty() ? 0 : (keep.size() - 1) * hop + kFrame;
  std::vector<double> xo(out_len, 0.0), yo(out_len, 0.0);
  for (size_t k = 0; k < keep.size(); ++k)
    for (int n = 0; n < kFrame; ++n) {
      xo[k * hop + n] += w[n] * x[keep[k] + n];
      yo[k * hop + n] += w[n] * y[keep[k] + n];
    }
  x = std::move(xo);
  y = std::move(yo);
}

// One-third-octave band energies per frame: result[band][frame].
std::vector<std::vector<double>> third_octave(const std::vector<double>& x) {
  const int hop = kFrame / 2;
  const auto w = inner_hann(kFrame);
  const int bins = kFft / 2 + 1;

  // Band edges snapped to the nearest FFT bin; band covers [lo, hi).
  std::vector<int> lo(kBands), hi(kBands);
  for (int b = 0; b < kBands; ++b) {
    const double fl = kMinFreq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
    const double fh = kMinFreq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
    auto nearest = [&](double f) {
      int best = 0;
      double bd = INFINITY;
      for (int k = 0; k < bins; ++k) {
        const double d = (k * static_cast<double>(kStoiRate) / kFft - f);
        if (d * d < bd) {
          bd = d * d;
          best = k;
        }
      }
      return best;
    };
    lo[b] = nearest(fl);
    hi[b] = nearest(fh);
  }

  const auto& fft = audio::RealFft::get(kFft);
  std::vector<double> frame(kFft, 0.0);
  std::vector<std::complex<double>> spec(bins);
  std::vector<std::vector<double>> out(kBands);
  const int len = static_cast<int>(x.size());
  for (int start = 0; start < len - kFrame; start += hop) {
    for (int n = 0; n < kFrame; ++n) frame[n] = w[n] * x[start + n];
    fft.forward(frame, spec);
    for (int b = 0; b < kBands; ++b) {
      double e = 0.0;
      for (int k = lo[b]; k < hi[b]; ++k) e += std::norm(spec[k]);
      out[b].push_back(std::sqrt(e));
    }
  }
  return out;
}

}  // namespace

double stoi(std::span<const double> clean, std::span<const double> degraded, int sample_rate) {
  if (clean.size() != degraded.size()) throw ShapeError("stoi: clean and degraded lengths differ");
  std::vector<double> x, y;
  if (sample_rate == kStoiRate) {
    x.assign(clean.begin(), clean.end());
    y.assign(degraded.begin(), degraded.end());
  } else {
    x = audio::resample(clean, sample_rate, kStoiRate);
    y = audio::resample(degraded, sample_rate, kStoiRate);
  }
  remove_silent_frames(x, y);
  const auto xb = third_octave(x);
  const auto yb = third_octave(y);
  const int frames = static_cast<int>(xb[0].size());
  if (frames < kSegment)
    throw ShapeError("stoi: only " + std::to_string(frames) + " non-silent frames; at least " +
                     std::to_string(kSegment) + " are needed");

  const double clip = std::pow(10.0, -kBeta / 20.0);
  double total = 0.0;
  const int segments = frames - kSegment + 1;
  std::array<double, kSegment> xs{}, ys{};
  for (int m = 0; m < segments; ++m) {
    for (int b = 0; b < kBands; ++b) {
      double nx = 0.0, ny = 0.0;
      for (int j = 0; j < kSegment; ++j) {
        xs[j] = xb[b][m + j];
        ys[j] = yb[b][m + j];
        nx += xs[j] * xs[j];
        ny += ys[j] * ys[j];
      }
      const double scale = std::sqrt(nx) / (std::sqrt(ny) + kEps);
      double mx = 0.0, my = 0.0;
      for (int j = 0; j < kSegment; ++j) {
        ys[j] = std::min(ys[j] * scale, xs[j] * (1.0 + clip));
        mx += xs[j];
        my += ys[j];
      }
      mx /= kSegment;
      my /= kSegment;
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int j = 0; j < kSegment; ++j) {
        const double a = xs[j] - mx, c = ys[j] - my;
        sxx += a * a;
        syy += c * c;
        sxy += a * c;
      }
      total += sxy / ((std::sqrt(sxx) + kEps) * (std::sqrt(syy) + kEps));
    }
  }
  return total / (static_cast<double>(segments) * kBands);
}

double stoi(const audio::AudioClip& clean, const audio::AudioClip& degraded) {
  if (clean.sample_rate != degraded.sample_rate) throw ConfigError("stoi: sample rates differ");
  return stoi(audio::to_double(clean.samples), audio::to_double(degraded.samples), clean.sample_rate);
}

}  // namespace wmtrig::scorecard
