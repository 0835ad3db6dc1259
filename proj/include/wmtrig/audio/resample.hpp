#pragma once

#include <span>
#include <vector>

namespace wmtrig::audio {

// Rational polyphase resampling with a Kaiser-windowed sinc anti-aliasing
// filter (10 zero crossings per side at the lower of the two rates, beta 5).
// The filter is centred, so output is time-aligned with the input. Output
// length is ceil(n * to / from).
std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate);

}  // namespace wmtrig::audio
