#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/poison/manifest.hpp"
#include "wmtrig/victims/features.hpp"
#include "wmtrig/victims/models.hpp"

namespace wmtrig::victims {

struct VictimConfig {
  Architecture architecture = Architecture::kResidualConv;
  FeatureConfig features;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  // Residual / plain conv widths; one stage per entry for residual nets.
  std::vector<int> widths{16, 32, 64, 128};
  int blocks_per_stage = 1;
  int lstm_hidden = 128;
  int lstm_layers = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static VictimConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // training accuracy over the epoch, percent
};

struct TrainedVictim {
  VictimModel model;
  std::vector<EpochRecord> history;
};

// Freshly initialised model for cfg (seeded).
VictimModel init_victim(const VictimConfig& cfg);

// Cross-entropy training with Adam and a seeded per-epoch shuffle. Labels
// are indices into model.classes(). Throws DivergenceError on a non-finite
// batch loss. When history_log is non-empty one JSON line per epoch is
// written there.
TrainedVictim train_on_features(const VictimModel& init, std::span<const FeatureMatrix> features,
                                std::span<const int> labels, const VictimConfig& cfg,
                                const std::filesystem::path& history_log = {});

// Loads every clip of the manifest, extracts features and trains. Labels
// outside cfg.classes are rejected before training starts. Provenance
// records the manifest digest, a config hash and the seed.
TrainedVictim train_victim(const poison::CorpusManifest& manifest, const VictimConfig& cfg,
                           const std::filesystem::path& history_log = {});

std::vector<FeatureMatrix> manifest_features(const poison::CorpusManifest& manifest, const FeatureConfig& cfg);

}  // namespace wmtrig::victims
