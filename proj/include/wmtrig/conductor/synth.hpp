#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/common/rng.hpp"

namespace wmtrig::conductor {

// The ten command words used for SC-10.
const std::vector<std::string>& sc10_words();

// Parameters of a synthetic Speech-Commands-style corpus: one folder per
// word, 1 s 16 kHz clips named <speaker>_nohash_<k>.wav.
struct SynthSpec {
  std::vector<std::string> words = sc10_words();
  int per_class = 300;
  int speakers = 60;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct Speaker {
  std::string id;       // 8 hex digits
  double f0 = 120.0;    // Hz
  double tract = 1.0;   // formant scale (vocal-tract length)
  double breath = 0.0;  // aspiration noise mixed into voicing
};

Speaker make_speaker(Rng& rng);

// One source-filter utterance of `word` (glottal pulses or noise through
// time-varying formant resonators), placed at a random onset in a 1 s clip
// with background noise. The SC-10 words have hand-written phone templates;
// other words get a template derived from a hash of the word.
audio::AudioClip synthesize_utterance(const std::string& word, const Speaker& speaker, Rng& rng);

// Writes the corpus under root and a synth.json marker. An existing corpus
// with an identical marker is left untouched. Returns the number of clips.
size_t synthesize_corpus(const SynthSpec& spec, const std::filesystem::path& root);

}  // namespace wmtrig::conductor
