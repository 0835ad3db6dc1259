#pragma once

#include <vector>

#include <json.hpp>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/audio/mel.hpp"

namespace wmtrig::victims {

struct FeatureConfig {
  int n_mels = 40;
  int fft_size = 512;
  int win_length = 400;
  int hop = 160;
  double fmin = 20.0;
  double fmax = 8000.0;
  // Clips are zero-padded or truncated to this many samples; 0 keeps the
  // native length (recurrent models accept variable frame counts).
  int fixed_samples = audio::kCanonicalRate;
  // Cells are clamped to (utterance peak - top_db) before normalising so that
  // bands emptied by a filter sit near the quietest speech, not at the -100 dB
  // floor. <= 0 disables the clamp.
  double top_db = 60.0;

  audio::MelConfig mel_config() const;
  int frames_for(int samples) const;
  void validate() const;
  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& j);
  bool operator==(const FeatureConfig&) const = default;
};

// Frame-major log-mel features: values[f * bands + m].
struct FeatureMatrix {
  int frames = 0;
  int bands = 0;
  std::vector<float> values;
  float at(int frame, int band) const { return values[static_cast<size_t>(frame) * bands + band]; }
};

// dB mel spectrogram, clamped to top_db under its peak, then normalised per
// utterance to zero mean and unit variance over all cells. A constant matrix (e.g. silence) normalises to all zeros.
FeatureMatrix extract_features(const audio::AudioClip& clip, const FeatureConfig& cfg);

}  // namespace wmtrig::victims
