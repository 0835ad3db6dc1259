#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace wmtrig::poison {

enum class PoisonMode { kLabelFlip, kCleanLabel };
std::string to_string(PoisonMode mode);
PoisonMode parse_mode(const std::string& name);

struct ManifestEntry {
  std::string clip_ref;  // absolute path to a WAV file
  std::string label;
  bool poisoned = false;
  std::string original_label;

  bool operator==(const ManifestEntry&) const = default;
};

struct Provenance {
  std::uint64_t seed = 0;
  double rho = 0.0;
  std::string target_label;
  PoisonMode mode = PoisonMode::kLabelFlip;
  std::string trigger_id;
  std::string sampler;
  size_t corpus_size = 0;
  size_t poisoned_count = 0;

  nlohmann::json to_json() const;
  static Provenance from_json(const nlohmann::json& j);
  bool operator==(const Provenance&) const = default;
};

// Ordered clip list. Saved as CSV (clip_ref,label,poisoned,original_label)
// with provenance in a "<name>.provenance.json" sidecar when present.
struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::optional<Provenance> provenance;

  size_t size() const { return entries.size(); }
  size_t poisoned_count() const;
  std::vector<std::string> labels() const;

  // Builds an un-poisoned manifest; original_label mirrors label.
  static CorpusManifest from_clips(const std::vector<std::pair<std::string, std::string>>& ref_label);

  std::string to_csv() const;
  // SHA-256 of the CSV text plus the serialised provenance.
  std::string digest() const;

  void save(const std::filesystem::path& csv_path) const;
  static CorpusManifest load(const std::filesystem::path& csv_path);
  static std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);
};

}  // namespace wmtrig::poison
