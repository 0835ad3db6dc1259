#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wmtrig/gauntlet/butterworth.hpp"
#include "wmtrig/gauntlet/prune.hpp"
#include "wmtrig/scorecard/report.hpp"

namespace wmtrig::gauntlet {

// One point of a defense sweep. `report` is absent when the defense or the
// evaluation failed at this point; `error` then says why.
struct SweepRow {
  double value = 0.0;  // pruning rate or cutoff frequency
  std::optional<scorecard::EvalReport> report;
  size_t parameters = 0;
  std::string error;
};

// Prunes a fresh copy per rate and evaluates BA/ASR (perceptual metrics are
// skipped; pruning leaves the audio unchanged). Rates must be sorted and
// within [0, 1]. Per-rate failures are recorded and the sweep continues.
std::vector<SweepRow> sweep_pruning(const victims::VictimModel& model, std::span<const double> rates,
                                    const scorecard::EvalInputs& in);

// Filters both evaluation populations at each cutoff before inference.
std::vector<SweepRow> sweep_lowpass(const victims::VictimModel& model, std::span<const double> cutoffs_hz,
                                    int order, bool zero_phase, const scorecard::EvalInputs& in);

// Columns: <key>, ba, asr, parameters, error.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows, const std::string& key);

}  // namespace wmtrig::gauntlet
