#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/scorecard/pesq.hpp"
#include "wmtrig/victims/models.hpp"

namespace wmtrig::scorecard {

struct ClipRecord {
  std::string clip_id;
  std::string true_label;
  std::string predicted;
  bool triggered = false;
  std::optional<double> stoi;
  std::optional<double> snr;
};

struct EvalReport {
  double ba = 0.0;
  double asr = 0.0;
  std::optional<double> stoi_mean;
  std::optional<double> pesq_mean;
  std::optional<double> snr_mean;
  std::string target_label;
  nlohmann::json condition = nlohmann::json::object();
  std::vector<ClipRecord> clips;
  std::vector<std::string> diagnostics;

  // Recomputes BA and ASR from the per-clip log.
  double ba_from_log() const;
  double asr_from_log() const;

  // Infinite SNR values serialise as the string "inf".
  nlohmann::json to_json() const;
  // <dir>/report.json and <dir>/predictions.csv
  void save(const std::filesystem::path& dir) const;
};

struct EvalInputs {
  std::span<const audio::AudioClip> clean;          // BA population (all classes)
  std::span<const audio::AudioClip> triggered;      // ASR population (non-target)
  std::span<const audio::AudioClip> trigger_sources;  // clean counterparts of `triggered`, same order
  std::string target_label;
  bool perceptual = true;  // compute STOI / SNR / PESQ over trigger_sources vs triggered
  const PesqScorer* pesq = nullptr;
};

EvalReport evaluate(const victims::VictimModel& model, const EvalInputs& in);

// Perceptual averages only (no model): STOI, SNR and optional PESQ of each
// triggered clip against its source.
struct PerceptualSummary {
  std::optional<double> stoi_mean;
  std::optional<double> snr_mean;
  std::optional<double> pesq_mean;
  std::vector<double> stoi;
  std::vector<double> snr;
};
PerceptualSummary perceptual_summary(std::span<const audio::AudioClip> sources,
                                     std::span<const audio::AudioClip> triggered, const PesqScorer* pesq,
                                     std::vector<std::string>* diagnostics = nullptr);

nlohmann::json finite_or_inf(double v);

}  // namespace wmtrig::scorecard
