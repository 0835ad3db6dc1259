#pragma once

#include <span>

#include "wmtrig/audio/clip.hpp"

namespace wmtrig::scorecard {

inline constexpr int kStoiRate = 10000;

// Short-time objective intelligibility (Taal et al. 2011):
//   both signals resampled to 10 kHz; frames of 256 samples (hop 128,
//   Hann) where the clean signal is more than 40 dB below its loudest
//   frame are removed from both; 512-point STFT; 15 one-third-octave bands
//   from 150 Hz; sliding 30-frame (384 ms) segments; degraded envelopes
//   normalised to the clean energy and clipped at -15 dB SDR; mean
//   correlation over bands and segments.
// Throws ShapeError when lengths differ or fewer than 30 frames remain.
double stoi(std::span<const double> clean, std::span<const double> degraded, int sample_rate);
double stoi(const audio::AudioClip& clean, const audio::AudioClip& degraded);

}  // namespace wmtrig::scorecard
