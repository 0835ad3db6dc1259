#include "wmtrig/audio/clip.hpp"

#include <cmath>

#include "wmtrig/common/error.hpp"

namespace wmtrig::audio {

void AudioClip::validate() const {
  if (samples.empty()) throw FormatError("clip '" + clip_id + "' has no samples");
  if (sample_rate <= 0) throw FormatError("clip '" + clip_id + "' has non-positive rate");
  for (float s : samples)
    if (!std::isfinite(s)) throw FormatError("clip '" + clip_id + "' has non-finite samples");
}

std::vector<double> to_double(std::span<const float> samples) {
  return {samples.begin(), samples.end()};
}

std::vector<float> to_float(std::span<const double> samples) {
  std::vector<float> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) out[i] = static_cast<float>(samples[i]);
  return out;
}

}  // namespace wmtrig::audio
