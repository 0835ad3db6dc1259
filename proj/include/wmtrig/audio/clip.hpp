#pragma once

#include <span>
#include <string>
#include <vector>

namespace wmtrig::audio {

inline constexpr int kCanonicalRate = 16000;

// A mono waveform with its rate and identity. Samples are nominally in
// [-1, 1]; the only hard invariants are non-emptiness, finiteness and a
// positive rate, checked by validate().
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kCanonicalRate;
  std::string clip_id;
  std::string label;

  void validate() const;
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

std::vector<double> to_double(std::span<const float> samples);
std::vector<float> to_float(std::span<const double> samples);

// A deterministic clip-to-clip transform: triggers, defenses, effects.
class ClipTransform {
 public:
  virtual ~ClipTransform() = default;
  virtual AudioClip apply(const AudioClip& clip) const = 0;
  // Stable identifier used in provenance records.
  virtual std::string describe() const = 0;
};

}  // namespace wmtrig::audio
