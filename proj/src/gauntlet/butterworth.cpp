#include "wmtrig/gauntlet/butterworth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "wmtrig/common/error.hpp"

namespace wmtrig::gauntlet {
namespace {

using cd = std::complex<double>;

// Steady-state DF2T state of one section for a unit step input.
std::array<double, 2> section_zi(const Section& s) {
  const double dc = (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]);
  const double z2 = s[2] - s[5] * dc;
  const double z1 = s[1] - s[4] * dc + z2;
  return {z1, z2};
}

std::vector<double> run(const std::vector<Section>& sos, std::vector<double> x, double x0, bool steady) {
  double scale = x0;
  for (const auto& s : sos) {
    double z1 = 0.0, z2 = 0.0;
    if (steady) {
      const auto zi = section_zi(s);
      z1 = zi[0] * scale;
      z2 = zi[1] * scale;
      scale *= (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]);
    }
    for (double& v : x) {
      const double in = v;
      const double y = s[0] * in + z1;
      z1 = s[1] * in - s[4] * y + z2;
      z2 = s[2] * in - s[5] * y;
      v = y;
    }
  }
  return x;
}

}  // namespace

void FilterSpec::validate(int sample_rate) const {
  if (order < 1) throw ConfigError("filter order must be >= 1, got " + std::to_string(order));
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate / 2.0))
    throw ConfigError("filter cutoff " + std::to_string(cutoff_hz) + " Hz must lie in (0, " +
                      std::to_string(sample_rate / 2.0) + ")");
}

nlohmann::json FilterSpec::to_json() const {
  return {{"family", "butterworth_lowpass"}, {"order", order}, {"cutoff_hz", cutoff_hz}, {"zero_phase", zero_phase}};
}

FilterSpec FilterSpec::from_json(const nlohmann::json& j) {
  FilterSpec s;
  s.order = j.value("order", s.order);
  s.cutoff_hz = j.value("cutoff_hz", s.cutoff_hz);
  s.zero_phase = j.value("zero_phase", s.zero_phase);
  if (j.contains("family") && j["family"] != "butterworth_lowpass")
    throw ConfigError("unsupported filter family " + j["family"].dump());
  return s;
}

SosFilter design_butterworth(int order, double cutoff_hz, double sample_rate) {
  FilterSpec{order, cutoff_hz, true}.validate(static_cast<int>(sample_rate));
  const double fs2 = 2.0 * sample_rate;
  const double wc = fs2 * std::tan(std::numbers::pi * cutoff_hz / sample_rate);
  SosFilter f;
  // Upper-half-plane analog poles; each pairs with its conjugate.
  for (int k = 0; k < order / 2; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
    const cd p = wc * std::polar(1.0, theta);
    const cd z = (fs2 + p) / (fs2 - p);
    const double a1 = -2.0 * z.real(), a2 = std::norm(z);
    const double g = (1.0 + a1 + a2) / 4.0;
    f.sections.push_back({g, 2 * g, g, 1.0, a1, a2});
  }
  if (order % 2 == 1) {
    const double z = (fs2 - wc) / (fs2 + wc);
    const double g = (1.0 - z) / 2.0;
    f.sections.push_back({g, g, 0.0, 1.0, -z, 0.0});
  }
  return f;
}

double SosFilter::magnitude(double freq_hz, double sample_rate) const {
  const cd z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate);
  cd h = 1.0;
  for (const auto& s : sections) h *= (s[0] + s[1] * z1 + s[2] * z1 * z1) / (1.0 + s[4] * z1 + s[5] * z1 * z1);
  return std::abs(h);
}

std::vector<double> SosFilter::filter(std::span<const double> x) const {
  return run(sections, std::vector<double>(x.begin(), x.end()), 0.0, false);
}

std::vector<double> SosFilter::filtfilt(std::span<const double> x) const {
  const size_t n = x.size();
  if (n == 0) return {};
  size_t zero_b = 0, zero_a = 0;
  for (const auto& s : sections) {
    zero_b += s[2] == 0.0;
    zero_a += s[5] == 0.0;
  }
  size_t pad = 3 * (2 * sections.size() + 1 - std::min(zero_b, zero_a));
  pad = std::min(pad, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const double x0 = ext.front();
  auto y = run(sections, std::move(ext), x0, true);
  std::reverse(y.begin(), y.end());
  const double y0 = y.front();
  y = run(sections, std::move(y), y0, true);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

audio::AudioClip lowpass_filter(const audio::AudioClip& clip, const FilterSpec& spec) {
  spec.validate(clip.sample_rate);
  const auto f = design_butterworth(spec.order, spec.cutoff_hz, clip.sample_rate);
  const auto x = audio::to_double(clip.samples);
  audio::AudioClip out = clip;
  out.samples = audio::to_float(spec.zero_phase ? f.filtfilt(x) : f.filter(x));
  return out;
}

std::string LowpassDefense::describe() const {
  return "lowpass:butterworth" + std::to_string(spec_.order) + "@" + std::to_string(spec_.cutoff_hz) +
         (spec_.zero_phase ? ":zero-phase" : ":single-pass");
}

}  // namespace wmtrig::gauntlet
