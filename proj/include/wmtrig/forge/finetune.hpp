#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/forge/generator.hpp"
#include "wmtrig/forge/losses.hpp"

namespace wmtrig::forge {

struct FinetuneConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  // Exactly one of steps / epochs is used; steps wins when positive.
  int steps = 0;
  int epochs = 1;
  std::uint64_t seed = 0;
  LossSpec loss;
  // Clips longer than this are centre-cropped before training (0 keeps all).
  int segment_length = 0;
  // Line-delimited JSON metrics, one record per step. Empty disables.
  std::filesystem::path metrics_log;
  void validate() const;
};

struct FinetuneRecord {
  int step = 0;
  LossBundle loss;
};

struct FinetuneOutcome {
  TriggerGenerator generator;
  std::vector<FinetuneRecord> history;
};

// Trains the adapters of `gen` so that its residual approaches the frozen
// alpha-scaled target alpha * G0(x) under the joint objective. When at least
// one step runs, alpha is absorbed into the returned generator, whose
// trigger() then emits G(x) directly. Throws DivergenceError on a
// non-finite loss.
FinetuneOutcome finetune_generator(const TriggerGenerator& gen,
                                   std::span<const audio::AudioClip> corpus,
                                   const FinetuneConfig& cfg);

}  // namespace wmtrig::forge
