#pragma once

#include <string>

#include <json.hpp>

#include "wmtrig/audio/clip.hpp"

namespace wmtrig::baselines {

enum class BaselineKind { kHfTone, kPitchShift, kStylistic };
std::string to_string(BaselineKind k);
BaselineKind parse_kind(const std::string& name);

struct BaselineTriggerSpec {
  BaselineKind kind = BaselineKind::kHfTone;
  // hf_tone: sin(2 pi f n / rate) * amplitude added to the clip.
  double tone_hz = 7500.0;
  double amplitude = 0.01;
  // pitch_shift: phase-vocoder shift, duration preserved.
  double semitones = 2.0;
  // stylistic: gain, then hard clipping at +-clip_level.
  double gain_db = 12.0;
  double clip_level = 0.3;

  // tone_hz in (0, rate/2), amplitude in [0, 1], semitones in [-12, 12],
  // clip_level in (0, 1].
  void validate(int sample_rate) const;
  nlohmann::json to_json() const;
  static BaselineTriggerSpec from_json(const nlohmann::json& j);
};

audio::AudioClip apply_baseline_trigger(const audio::AudioClip& clip, const BaselineTriggerSpec& spec);

// Phase-vocoder pitch shift (STFT 1024/256 Hann, time stretch by the pitch
// ratio, then resampling back to the input length).
std::vector<double> pitch_shift(std::span<const double> x, double semitones);

class BaselineTrigger : public audio::ClipTransform {
 public:
  explicit BaselineTrigger(BaselineTriggerSpec spec) : spec_(spec) {}
  audio::AudioClip apply(const audio::AudioClip& clip) const override { return apply_baseline_trigger(clip, spec_); }
  std::string describe() const override;
  const BaselineTriggerSpec& spec() const { return spec_; }

 private:
  BaselineTriggerSpec spec_;
};

}  // namespace wmtrig::baselines
