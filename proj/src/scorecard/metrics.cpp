#include "wmtrig/scorecard/metrics.hpp"

#include <cmath>
#include <limits>

#include "wmtrig/common/error.hpp"

namespace wmtrig::scorecard {

double benign_accuracy(std::span<const std::string> predicted, std::span<const std::string> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("benign_accuracy: length mismatch");
  if (truth.empty()) throw ConfigError("benign_accuracy: empty evaluation set");
  size_t correct = 0;
  for (size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
}

double attack_success_rate(std::span<const std::string> predicted, std::span<const std::string> truth,
                           const std::string& target) {
  if (predicted.size() != truth.size()) throw ShapeError("attack_success_rate: length mismatch");
  if (truth.empty()) throw ConfigError("attack_success_rate: empty triggered set");
  size_t hits = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == target)
      throw InfeasibleError("attack_success_rate: triggered set contains a clip of the target class");
    hits += predicted[i] == target;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(truth.size());
}

double snr_db(std::span<const double> clean, std::span<const double> degraded) {
  if (clean.size() != degraded.size()) throw ShapeError("snr: length mismatch");
  double sig = 0.0, noise = 0.0;
  for (size_t i = 0; i < clean.size(); ++i) {
    sig += clean[i] * clean[i];
    const double d = clean[i] - degraded[i];
    noise += d * d;
  }
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / noise);
}

double snr_db(const audio::AudioClip& clean, const audio::AudioClip& degraded) {
  return snr_db(audio::to_double(clean.samples), audio::to_double(degraded.samples));
}

}  // namespace wmtrig::scorecard
