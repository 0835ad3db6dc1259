#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/poison/manifest.hpp"

namespace wmtrig::poison {

struct PoisonConfig {
  double rho = 0.01;
  std::string target_label = "left";
  PoisonMode mode = PoisonMode::kLabelFlip;
  std::uint64_t seed = 0;
  double alpha = 5.0;  // forwarded to the trigger generator by callers
  void validate() const;
};

// round(rho * n), ties to even.
size_t poison_count(size_t n, double rho);

// Sorted indices of the samples to poison, drawn uniformly without
// replacement from the non-target positions by a partial Fisher-Yates
// shuffle driven by Rng(seed). Throws InfeasibleError when the required count
// exceeds the number of non-target samples.
std::vector<size_t> select_poison_indices(std::span<const std::string> labels,
                                          const PoisonConfig& cfg);

inline constexpr const char* kSamplerName = "partial-fisher-yates/mt19937_64/rejection-index";

struct PoisonResult {
  CorpusManifest manifest;
  size_t files_written = 0;
  size_t clipped_samples = 0;  // full-scale samples across triggered clips
};

// Applies `trigger` to the selected clips and writes them as 16-bit WAV under
// out_dir, mirroring each source path relative to source_root (or
// <label>/<filename> for paths outside it). Unselected entries keep their
// source clip_ref. Writes go through temporary files; on any failure every
// file written by this call is removed and IoError is thrown.
PoisonResult poison_dataset(const CorpusManifest& corpus, const audio::ClipTransform& trigger,
                            const PoisonConfig& cfg, const std::filesystem::path& out_dir,
                            const std::filesystem::path& source_root = {});

// Triggered copies of every clip whose true label differs from target_label;
// labels keep their true values.
std::vector<audio::AudioClip> build_trigger_eval_clips(std::span<const audio::AudioClip> clips,
                                                       const audio::ClipTransform& trigger,
                                                       const std::string& target_label);

// File-backed variant: writes triggered WAVs under out_dir and returns the
// matching manifest (poisoned = true, label = original_label = true label).
CorpusManifest build_trigger_eval_set(const CorpusManifest& corpus,
                                      const audio::ClipTransform& trigger,
                                      const std::string& target_label,
                                      const std::filesystem::path& out_dir,
                                      const std::filesystem::path& source_root = {});

}  // namespace wmtrig::poison
