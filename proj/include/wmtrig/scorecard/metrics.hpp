#pragma once

#include <span>
#include <string>
#include <vector>

#include "wmtrig/audio/clip.hpp"

namespace wmtrig::scorecard {

// Percent of positions where predicted == truth. Throws ConfigError when
// empty.
double benign_accuracy(std::span<const std::string> predicted, std::span<const std::string> truth);

// Percent of triggered clips predicted as target. Every truth label must
// differ from target (InfeasibleError otherwise); empty input throws.
double attack_success_rate(std::span<const std::string> predicted, std::span<const std::string> truth,
                           const std::string& target);

// 10 log10(|x|^2 / |x - y|^2); +infinity when the inputs are identical.
double snr_db(std::span<const double> clean, std::span<const double> degraded);
double snr_db(const audio::AudioClip& clean, const audio::AudioClip& degraded);

}  // namespace wmtrig::scorecard
