#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/conductor/synth.hpp"
#include "wmtrig/poison/manifest.hpp"

namespace wmtrig::conductor {

inline constexpr const char* kDataRootEnv = "WMTRIG_DATA_ROOT";

// Class-folder tree root/<label>/*.wav. Folders whose names start with '_'
// or '.' (e.g. _background_noise_) are ignored.
struct DatasetSpec {
  std::filesystem::path root;       // empty: taken from WMTRIG_DATA_ROOT
  std::vector<std::string> classes;  // empty: every class folder
  double train_fraction = 0.9;
  std::uint64_t split_seed = 0;
  int max_per_class = 300;              // 0: no cap
  std::optional<SynthSpec> synthesize;  // create the tree at root when absent

  void validate() const;
  // root, or the environment variable when root is empty.
  std::filesystem::path resolved_root() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

struct ClassCount {
  int train = 0;
  int eval = 0;
};

struct DatasetSplit {
  poison::CorpusManifest train;
  poison::CorpusManifest eval;
  std::vector<std::string> classes;  // in folder-name order
  std::map<std::string, ClassCount> counts;
};

// Within each class, clips are ordered by sha256(split_seed:relative path);
// the first max_per_class are kept and the first round(n * train_fraction)
// of those go to train. Manifests list clips by class, then path.
DatasetSplit ingest_dataset(const DatasetSpec& spec);

// Loads every clip of a manifest at the canonical rate; clip_id is the
// clip_ref and label the manifest label.
std::vector<audio::AudioClip> load_manifest_clips(const poison::CorpusManifest& manifest);

}  // namespace wmtrig::conductor
