#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/conductor/config.hpp"

namespace wmtrig::conductor {

enum class Stage { kIngest, kTrigger, kPoison, kTrain, kEval, kDefend, kReport };
std::string to_string(Stage s);
Stage parse_stage(const std::string& name);

struct RunArtifact {
  std::filesystem::path run_dir;
  std::string config_hash;
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_reused;
  nlohmann::json summary;  // set once the report stage has completed
};

// Runs ingest -> trigger -> poison -> train -> eval -> defend -> report up
// to and including `until`, under cfg.run_dir(). Completed stages (marked in
// stages/<name>.json) are reused, so interrupted runs resume and repeated
// runs overwrite nothing. A lock file gives the run exclusive ownership of
// its directory. Stage failures are written to stages/<name>.failed and
// rethrown as StageError; partial artifacts are kept. `shared_split`
// replaces the ingest computation (its manifests are still written).
RunArtifact run_experiment(const ExperimentConfig& cfg, Stage until = Stage::kReport,
                           const DatasetSplit* shared_split = nullptr);

// The trigger built or trained by the trigger stage of a run.
std::unique_ptr<audio::ClipTransform> load_run_trigger(const std::filesystem::path& run_dir);
// summary.json of a completed run; StageError when absent.
nlohmann::json load_summary(const std::filesystem::path& run_dir);

enum class SweepAxis { kRho, kAlpha, kPruneRate };
std::string to_string(SweepAxis a);
SweepAxis parse_axis(const std::string& name);

struct SweepPoint {
  double value = 0.0;
  std::optional<double> ba, asr, stoi, pesq, snr;
  std::string run;  // config hash of the run that produced the point
  std::string error;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::filesystem::path table;  // CSV: <axis>, ba, asr, stoi, pesq, snr, run, error
};

// One run per value for rho and alpha with a single shared ingestion; one
// run with defenses.prune_rates = values for prune_rate. Failed points are
// recorded and the sweep continues.
SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values);

}  // namespace wmtrig::conductor
