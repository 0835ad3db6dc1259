#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wmtrig/audio/clip.hpp"

namespace wmtrig::audio {

struct WavReadReport {
  int channels = 0;
  int bits_per_sample = 0;
  bool is_float = false;
  std::vector<std::string> warnings;
};

// Reads 16-bit integer or 32-bit float PCM RIFF/WAVE. Integer samples are
// scaled by 1/32768. Multi-channel files are reduced to channel 0 and a
// warning is recorded. clip_id is set to the path; label is left empty.
AudioClip load_wav(const std::filesystem::path& path, WavReadReport* report = nullptr);

// load_wav followed by resampling to the canonical rate when needed.
AudioClip load_wav_canonical(const std::filesystem::path& path,
                             WavReadReport* report = nullptr);

// Writes mono 16-bit PCM. Samples are scaled by 32768, rounded to nearest and
// clamped to the int16 range, so 16-bit input round-trips exactly.
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace wmtrig::audio
