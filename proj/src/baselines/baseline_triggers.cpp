#include "wmtrig/baselines/baseline_triggers.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "wmtrig/audio/fft.hpp"
#include "wmtrig/audio/resample.hpp"
#include "wmtrig/audio/stft.hpp"
#include "wmtrig/common/error.hpp"

namespace wmtrig::baselines {
namespace {

using cd = std::complex<double>;

constexpr int kFft = 1024;
constexpr int kHop = 256;
// Pitch ratios are realised as round(1000 r) / 1000 (under 1 cent of error)
// so the resampling filter stays small.
constexpr int kRatioDen = 1000;

double wrap(double p) { return p - 2.0 * std::numbers::pi * std::round(p / (2.0 * std::numbers::pi)); }

// Weighted overlap-add inverse of the centred STFT.
std::vector<double> istft(const std::vector<std::vector<cd>>& frames, size_t length, const std::vector<double>& win) {
  const auto& fft = audio::RealFft::get(kFft);
  const size_t padded = (frames.empty() ? 0 : (frames.size() - 1) * kHop) + kFft;
  std::vector<double> acc(padded, 0.0), norm(padded, 0.0), buf(kFft);
  for (size_t t = 0; t < frames.size(); ++t) {
    fft.inverse(frames[t], buf);
    for (int n = 0; n < kFft; ++n) {
      acc[t * kHop + n] += win[n] * buf[n] / kFft;
      norm[t * kHop + n] += win[n] * win[n];
    }
  }
  std::vector<double> y(length, 0.0);
  for (size_t i = 0; i < length && i + kFft / 2 < padded; ++i) {
    const double d = norm[i + kFft / 2];
    if (d > 1e-8) y[i] = acc[i + kFft / 2] / d;
  }
  return y;
}

std::string num(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::kHfTone: return "hf_tone";
    case BaselineKind::kPitchShift: return "pitch_shift";
    case BaselineKind::kStylistic: return "stylistic";
  }
  throw ConfigError("unknown baseline kind");
}

BaselineKind parse_kind(const std::string& name) {
  if (name == "hf_tone") return BaselineKind::kHfTone;
  if (name == "pitch_shift") return BaselineKind::kPitchShift;
  if (name == "stylistic") return BaselineKind::kStylistic;
  throw ConfigError("unknown baseline trigger kind '" + name + "' (hf_tone, pitch_shift, stylistic)");
}

void BaselineTriggerSpec::validate(int sample_rate) const {
  switch (kind) {
    case BaselineKind::kHfTone:
      if (!(tone_hz > 0.0 && tone_hz < sample_rate / 2.0))
        throw ConfigError("hf_tone frequency " + num(tone_hz) + " Hz must lie below Nyquist (" +
                          num(sample_rate / 2.0) + " Hz)");
      if (!(amplitude >= 0.0 && amplitude <= 1.0)) throw ConfigError("hf_tone amplitude must lie in [0, 1]");
      break;
    case BaselineKind::kPitchShift:
      if (!(semitones >= -12.0 && semitones <= 12.0)) throw ConfigError("pitch shift must lie in [-12, 12] semitones");
      break;
    case BaselineKind::kStylistic:
      if (!std::isfinite(gain_db)) throw ConfigError("stylistic gain must be finite");
      if (!(clip_level > 0.0 && clip_level <= 1.0)) throw ConfigError("stylistic clip level must lie in (0, 1]");
      break;
  }
}

nlohmann::json BaselineTriggerSpec::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}};
  switch (kind) {
    case BaselineKind::kHfTone: j["tone_hz"] = tone_hz, j["amplitude"] = amplitude; break;
    case BaselineKind::kPitchShift: j["semitones"] = semitones; break;
    case BaselineKind::kStylistic: j["gain_db"] = gain_db, j["clip_level"] = clip_level; break;
  }
  return j;
}

BaselineTriggerSpec BaselineTriggerSpec::from_json(const nlohmann::json& j) {
  BaselineTriggerSpec s;
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.tone_hz = j.value("tone_hz", s.tone_hz);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.semitones = j.value("semitones", s.semitones);
  s.gain_db = j.value("gain_db", s.gain_db);
  s.clip_level = j.value("clip_level", s.clip_level);
  return s;
}

std::vector<double> pitch_shift(std::span<const double> x, double semitones) {
  const size_t n = x.size();
  if (n <= static_cast<size_t>(kFft / 2)) throw ShapeError("pitch shift needs more than " + std::to_string(kFft / 2) + " samples");
  const int num_rate = static_cast<int>(std::lround(kRatioDen * std::pow(2.0, semitones / 12.0)));
  const double ratio = static_cast<double>(num_rate) / kRatioDen;

  audio::StftConfig cfg;
  cfg.fft_size = kFft;
  cfg.hop = kHop;
  const auto spec = audio::stft_complex(x, cfg);
  const auto win = audio::make_window(cfg);
  const int bins = spec.bins;
  auto at = [&](int f, int k) { return spec.coeffs[static_cast<size_t>(f) * bins + k]; };

  // Time stretch by `ratio`: read frames at fractional steps of 1/ratio,
  // interpolating magnitude and accumulating the measured phase advance.
  std::vector<std::vector<cd>> out;
  std::vector<double> phase(bins);
  for (int k = 0; k < bins; ++k) phase[k] = std::arg(at(0, k));
  for (double t = 0.0; t < spec.frames - 1; t += 1.0 / ratio) {
    const int f = static_cast<int>(t);
    const double frac = t - f;
    std::vector<cd> frame(bins);
    for (int k = 0; k < bins; ++k) {
      const double mag = (1.0 - frac) * std::abs(at(f, k)) + frac * std::abs(at(f + 1, k));
      frame[k] = std::polar(mag, phase[k]);
      const double omega = 2.0 * std::numbers::pi * k * kHop / kFft;
      phase[k] += omega + wrap(std::arg(at(f + 1, k)) - std::arg(at(f, k)) - omega);
    }
    out.push_back(std::move(frame));
  }
  const auto stretched = istft(out, static_cast<size_t>(std::lround(n * ratio)), win);
  auto y = audio::resample(stretched, num_rate, kRatioDen);
  y.resize(n, 0.0);
  return y;
}

audio::AudioClip apply_baseline_trigger(const audio::AudioClip& clip, const BaselineTriggerSpec& spec) {
  spec.validate(clip.sample_rate);
  audio::AudioClip out = clip;
  switch (spec.kind) {
    case BaselineKind::kHfTone: {
      const double w = 2.0 * std::numbers::pi * spec.tone_hz / clip.sample_rate;
      for (size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = static_cast<float>(clip.samples[i] + spec.amplitude * std::sin(w * static_cast<double>(i)));
      break;
    }
    case BaselineKind::kPitchShift:
      out.samples = audio::to_float(pitch_shift(audio::to_double(clip.samples), spec.semitones));
      break;
    case BaselineKind::kStylistic: {
      const double g = std::pow(10.0, spec.gain_db / 20.0);
      for (auto& v : out.samples) v = static_cast<float>(std::clamp(g * v, -spec.clip_level, spec.clip_level));
      break;
    }
  }
  return out;
}

std::string BaselineTrigger::describe() const {
  switch (spec_.kind) {
    case BaselineKind::kHfTone: return "hf_tone:" + num(spec_.tone_hz) + "Hz@" + num(spec_.amplitude);
    case BaselineKind::kPitchShift: return "pitch_shift:" + num(spec_.semitones) + "st";
    case BaselineKind::kStylistic: return "stylistic:" + num(spec_.gain_db) + "dB/clip" + num(spec_.clip_level);
  }
  return "baseline";
}

}  // namespace wmtrig::baselines
