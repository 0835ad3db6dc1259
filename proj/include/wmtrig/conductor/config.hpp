#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/baselines/baseline_triggers.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/conductor/ingest.hpp"
#include "wmtrig/forge/finetune.hpp"
#include "wmtrig/forge/generator.hpp"
#include "wmtrig/gauntlet/butterworth.hpp"
#include "wmtrig/gauntlet/prune.hpp"
#include "wmtrig/poison/poison.hpp"
#include "wmtrig/victims/train.hpp"

namespace wmtrig::conductor {

inline constexpr int kConfigVersion = 1;

// A pipeline stage failed; the CLI maps this to exit code 3.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct FinetuneSpec {
  forge::FinetuneConfig train;  // metrics_log is set by the runner
  forge::AdapterOptions adapters;
  int corpus_size = 64;  // clean training clips used, taken in manifest order
};

struct WatermarkSpec {
  std::filesystem::path checkpoint;  // empty: built-in surrogate
  forge::SurrogateOptions surrogate;
  std::string owner = "wmtrig-desk";  // message = top 12 bits of sha256(owner)
  double alpha = 5.0;
  std::optional<FinetuneSpec> finetune;
};

// Exactly one of watermark / baseline.
struct TriggerSpec {
  std::optional<WatermarkSpec> watermark;
  std::optional<baselines::BaselineTriggerSpec> baseline;
};

struct DefenseSpec {
  std::optional<gauntlet::FilterSpec> lowpass;
  std::vector<double> prune_rates;
};

struct EvalSpec {
  bool perceptual = true;
  // Subprocess PESQ scorer, e.g. "pesq-cli {clean} {degraded} {rate}";
  // empty leaves PESQ absent.
  std::string pesq_command;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  DatasetSpec dataset;
  TriggerSpec trigger;
  poison::PoisonConfig poison;
  victims::VictimConfig victim;
  DefenseSpec defenses;
  EvalSpec eval;

  // Throws ConfigError; checks referenced paths exist.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing component seeds default to the global seed; missing
  // victim.classes default to dataset.classes.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides = {});

  // SHA-256 (16 hex digits) of the normalised config without output_dir.
  std::string hash() const;
  std::filesystem::path run_dir() const { return output_dir / hash(); }
};

// Applies "dotted.key=value" to a JSON document. The value is parsed as JSON
// when possible and taken as a string otherwise; intermediate objects are
// created as needed.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Desk-scale defaults: synthetic SC-10 (300 clips per class), surrogate
// watermark at alpha 5, rho 1 %, label flip to "left", small residual
// victim, 3800 Hz low-pass and a pruning grid.
nlohmann::json desk_config_json();

}  // namespace wmtrig::conductor
