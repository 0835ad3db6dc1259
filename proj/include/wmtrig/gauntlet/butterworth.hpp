#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/audio/clip.hpp"

namespace wmtrig::gauntlet {

struct FilterSpec {
  int order = 6;
  double cutoff_hz = 3800.0;
  bool zero_phase = true;  // forward-backward; false applies one causal pass

  // order >= 1 and 0 < cutoff_hz < sample_rate / 2.
  void validate(int sample_rate) const;
  nlohmann::json to_json() const;
  static FilterSpec from_json(const nlohmann::json& j);
};

// Second-order sections {b0, b1, b2, 1, a1, a2}; a first-order section has
// b2 = a2 = 0.
using Section = std::array<double, 6>;

struct SosFilter {
  std::vector<Section> sections;

  // |H(e^{j 2 pi f / rate})| of the cascade.
  double magnitude(double freq_hz, double sample_rate) const;
  // Direct form II transposed, zero initial state.
  std::vector<double> filter(std::span<const double> x) const;
  // Forward-backward with odd extension and steady-state initial
  // conditions, following scipy.signal.sosfiltfilt. The pad length is
  // shortened for inputs not longer than it.
  std::vector<double> filtfilt(std::span<const double> x) const;
};

// Digital Butterworth low-pass by the bilinear transform with the cutoff
// pre-warped, so |H(f_c)|^2 = 1/2 exactly and every section has unit DC
// gain. The digital response is 1 / (1 + (tan(pi f/fs) / tan(pi f_c/fs))^{2n}).
SosFilter design_butterworth(int order, double cutoff_hz, double sample_rate);

audio::AudioClip lowpass_filter(const audio::AudioClip& clip, const FilterSpec& spec);

// Pre-inference defense usable wherever a ClipTransform is accepted.
class LowpassDefense : public audio::ClipTransform {
 public:
  explicit LowpassDefense(FilterSpec spec) : spec_(spec) {}
  audio::AudioClip apply(const audio::AudioClip& clip) const override { return lowpass_filter(clip, spec_); }
  std::string describe() const override;

 private:
  FilterSpec spec_;
};

}  // namespace wmtrig::gauntlet
