#include "wmtrig/forge/losses.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "wmtrig/common/error.hpp"

namespace wmtrig::forge {
namespace {

using cd = std::complex<double>;

double sign(double v) { return (v > 0.0) - (v < 0.0); }

size_t element_count(const Batch& b) {
  size_t n = 0;
  for (const auto& v : b) n += v.size();
  return n;
}

void check_pair(const Batch& a, const Batch& b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": batch sizes differ");
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size())
      throw ShapeError(std::string(what) + ": length mismatch at batch index " + std::to_string(i));
}

std::vector<double> magnitudes(const audio::ComplexStft& s) {
  std::vector<double> m(s.coeffs.size());
  for (size_t i = 0; i < m.size(); ++i) m[i] = std::abs(s.coeffs[i]);
  return m;
}

// Accumulates one resolution of the multi-scale term for one sample. `scale`
// is d(term)/d(sum of per-element errors); z receives the STFT-domain
// gradient when non-null.
double stft_term(const audio::ComplexStft& xh, std::span<const double> ref_mag, double scale,
                 audio::ComplexStft* z) {
  double sum = 0.0;
  for (size_t i = 0; i < xh.coeffs.size(); ++i) {
    const double mh = std::abs(xh.coeffs[i]);
    const double m = ref_mag[i];
    sum += std::abs(mh - m) + std::abs(std::log(mh + kLogEps) - std::log(m + kLogEps));
    if (z) {
      const double s = sign(mh - m);
      const double g = scale * s * (1.0 + 1.0 / (mh + kLogEps));
      z->coeffs[i] = mh > 0.0 ? g * xh.coeffs[i] / mh : cd(0.0, 0.0);
    }
  }
  return sum;
}

double mel_term(const audio::ComplexStft& xh, const audio::MelSpectrogram& ref,
                const audio::MelFilterbank& fb, const audio::MelConfig& cfg, double scale,
                audio::ComplexStft* z) {
  const audio::MelSpectrogram mh = audio::mel_from_stft(xh, fb, cfg);
  double sum = 0.0;
  std::vector<double> d_power(fb.bins);
  for (int f = 0; f < mh.frames; ++f) {
    if (z) std::fill(d_power.begin(), d_power.end(), 0.0);
    for (int m = 0; m < mh.bands; ++m) {
      const double v = mh.at(m, f);
      const double diff = audio::to_db(v) - audio::to_db(ref.at(m, f));
      sum += std::abs(diff);
      if (z && v > audio::kDbFloor) {
        const double g = scale * sign(diff) * 10.0 / (std::numbers::ln10 * v);
        const double* row = &fb.weights[static_cast<size_t>(m) * fb.bins];
        for (int k = 0; k < fb.bins; ++k) d_power[k] += g * row[k];
      }
    }
    if (z)
      for (int k = 0; k < fb.bins; ++k) {
        const size_t i = static_cast<size_t>(f) * fb.bins + k;
        z->coeffs[i] = 2.0 * d_power[k] * xh.coeffs[i];
      }
  }
  return sum;
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {sup, stft, mel, amp})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
}

void LossSpec::validate() const {
  weights.validate();
  if (resolutions.empty()) throw ConfigError("at least one STFT resolution is required");
  for (const auto& r : resolutions) r.validate();
  mel.validate();
}

std::vector<audio::StftConfig> default_resolutions() {
  std::vector<audio::StftConfig> out;
  for (int n : {1024, 512, 256}) out.push_back(audio::StftConfig{n, n / 4});
  return out;
}

double supervised_loss(const Batch& pred, const Batch& target) {
  check_pair(pred, target, "supervised_loss");
  const size_t n = element_count(pred);
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    for (size_t t = 0; t < pred[i].size(); ++t) sum += std::abs(pred[i][t] - target[i][t]);
  return sum / static_cast<double>(n);
}

double multiscale_stft_loss(const Batch& x_hat, const Batch& x,
                            std::span<const audio::StftConfig> resolutions) {
  check_pair(x_hat, x, "multiscale_stft_loss");
  if (resolutions.empty()) throw ConfigError("multiscale_stft_loss: empty resolution list");
  double total = 0.0;
  for (const auto& cfg : resolutions) {
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      const auto ref = magnitudes(audio::stft_complex(x[i], cfg));
      sum += stft_term(audio::stft_complex(x_hat[i], cfg), ref, 0.0, nullptr);
      count += ref.size();
    }
    if (count) total += sum / static_cast<double>(count);
  }
  return total / static_cast<double>(resolutions.size());
}

double logmel_loss(const Batch& x_hat, const Batch& x, const audio::MelConfig& cfg) {
  check_pair(x_hat, x, "logmel_loss");
  const auto fb = audio::MelFilterbank::build(cfg);
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const auto ref = audio::mel_spectrogram(x[i], cfg);
    sum += mel_term(audio::stft_complex(x_hat[i], cfg.stft), ref, fb, cfg, 0.0, nullptr);
    count += ref.values.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double amplitude_reg(const Batch& residual) {
  const size_t n = element_count(residual);
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (const auto& v : residual)
    for (double s : v) sum += s * s;
  return sum / static_cast<double>(n);
}

LossBundle total_loss(double sup, double stft, double mel, double amp, const LossWeights& w) {
  LossBundle b{sup, stft, mel, amp, 0.0};
  b.total = w.sup * sup + w.stft * stft + w.mel * mel + w.amp * amp;
  return b;
}

LossBundle joint_loss(std::span<const JointSample> batch, const LossSpec& spec, Batch* grad) {
  spec.validate();
  if (batch.empty()) throw ShapeError("joint_loss: empty batch");
  size_t n_samples = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (s.residual.size() != s.clean.size() || s.target.size() != s.clean.size())
      throw ShapeError("joint_loss: length mismatch at batch index " + std::to_string(i));
    n_samples += s.clean.size();
  }
  const size_t n_res = spec.resolutions.size();
  std::vector<size_t> stft_counts(n_res, 0);
  size_t mel_count = 0;
  for (const auto& s : batch) {
    const int len = static_cast<int>(s.clean.size());
    for (size_t r = 0; r < n_res; ++r)
      stft_counts[r] += static_cast<size_t>(spec.resolutions[r].frame_count(len)) * spec.resolutions[r].bins();
    mel_count += static_cast<size_t>(spec.mel.stft.frame_count(len)) * spec.mel.n_mels;
  }
  const auto fb = audio::MelFilterbank::build(spec.mel);
  const LossWeights& w = spec.weights;

  if (grad) grad->assign(batch.size(), {});
  double sup = 0.0, amp = 0.0, mel = 0.0;
  std::vector<double> stft_sums(n_res, 0.0);
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    const int len = static_cast<int>(s.clean.size());
    std::vector<double> x_hat(s.clean.begin(), s.clean.end());
    for (int t = 0; t < len; ++t) x_hat[t] += s.residual[t];
    std::vector<double>* g = grad ? &(*grad)[i] : nullptr;
    if (g) g->assign(len, 0.0);

    for (int t = 0; t < len; ++t) {
      const double d = s.residual[t] - s.target[t];
      sup += std::abs(d);
      amp += s.residual[t] * s.residual[t];
      if (g) (*g)[t] += w.sup * sign(d) / n_samples + w.amp * 2.0 * s.residual[t] / n_samples;
    }

    for (size_t r = 0; r < n_res; ++r) {
      const auto& cfg = spec.resolutions[r];
      const auto ref = magnitudes(audio::stft_complex(s.clean, cfg));
      const auto xh = audio::stft_complex(x_hat, cfg);
      audio::ComplexStft z{xh.bins, xh.frames, std::vector<cd>(g ? xh.coeffs.size() : 0)};
      const double scale = w.stft / (static_cast<double>(n_res) * stft_counts[r]);
      stft_sums[r] += stft_term(xh, ref, scale, g ? &z : nullptr);
      if (g) {
        const auto dx = audio::stft_backward(z, len, cfg);
        for (int t = 0; t < len; ++t) (*g)[t] += dx[t];
      }
    }

    const auto ref_mel = audio::mel_spectrogram(s.clean, spec.mel);
    const auto xh = audio::stft_complex(x_hat, spec.mel.stft);
    audio::ComplexStft z{xh.bins, xh.frames, std::vector<cd>(g ? xh.coeffs.size() : 0)};
    mel += mel_term(xh, ref_mel, fb, spec.mel, w.mel / mel_count, g ? &z : nullptr);
    if (g) {
      const auto dx = audio::stft_backward(z, len, spec.mel.stft);
      for (int t = 0; t < len; ++t) (*g)[t] += dx[t];
    }
  }
  double stft = 0.0;
  for (size_t r = 0; r < n_res; ++r) stft += stft_sums[r] / stft_counts[r];
  stft /= static_cast<double>(n_res);
  return total_loss(sup / n_samples, stft, mel / mel_count, amp / n_samples, w);
}

}  // namespace wmtrig::forge
