#include "wmtrig/poison/poison.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wmtrig/audio/wav.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/log.hpp"
#include "wmtrig/common/rng.hpp"

namespace wmtrig::poison {
namespace fs = std::filesystem;
namespace {

fs::path mirrored_path(const fs::path& out_dir, const fs::path& source_root, const ManifestEntry& e) {
  const fs::path src = fs::path(e.clip_ref).lexically_normal();
  if (!source_root.empty()) {
    const fs::path rel = src.lexically_relative(fs::absolute(source_root).lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return out_dir / rel;
  }
  return out_dir / e.original_label / src.filename();
}

// Tracks files produced by one call so a failure can roll them all back.
class WriteSession {
 public:
  ~WriteSession() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
  }
  void write(const fs::path& path, const audio::AudioClip& clip) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    written_.push_back(tmp);
    audio::save_wav(tmp, clip);
    fs::rename(tmp, path);
    written_.back() = path;
  }
  size_t count() const { return written_.size(); }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> written_;
  bool committed_ = false;
};

template <typename Fn>
void run_session(WriteSession& session, Fn&& fn) {
  try {
    fn();
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("partial output discarded: ") + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string("partial output discarded: ") + e.what());
  }
}

}  // namespace

void PoisonConfig::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("poison rate must lie in [0, 1]");
  if (target_label.empty()) throw ConfigError("target label must be non-empty");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
}

size_t poison_count(size_t n, double rho) {
  return static_cast<size_t>(std::nearbyint(rho * static_cast<double>(n)));
}

std::vector<size_t> select_poison_indices(std::span<const std::string> labels, const PoisonConfig& cfg) {
  cfg.validate();
  if (labels.empty()) throw ConfigError("cannot select poison indices from an empty corpus");
  std::vector<size_t> pool;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != cfg.target_label) pool.push_back(i);
  const size_t k = poison_count(labels.size(), cfg.rho);
  if (k > pool.size())
    throw InfeasibleError("poisoning needs " + std::to_string(k) + " samples but only " +
                          std::to_string(pool.size()) + " non-target samples exist");
  Rng rng(cfg.seed);
  for (size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

PoisonResult poison_dataset(const CorpusManifest& corpus, const audio::ClipTransform& trigger,
                            const PoisonConfig& cfg, const fs::path& out_dir, const fs::path& source_root) {
  const auto labels = corpus.labels();
  const auto chosen = select_poison_indices(labels, cfg);
  PoisonResult result;
  result.manifest.entries = corpus.entries;
  for (auto& e : result.manifest.entries) {
    e.poisoned = false;
    e.original_label = e.label;
  }

  WriteSession session;
  run_session(session, [&] {
    for (size_t i : chosen) {
      ManifestEntry& e = result.manifest.entries[i];
      audio::AudioClip clip = audio::load_wav_canonical(e.clip_ref);
      clip.label = e.label;
      const audio::AudioClip triggered = trigger.apply(clip);
      for (float v : triggered.samples) result.clipped_samples += std::abs(v) >= 1.0f;
      const fs::path dest = fs::absolute(mirrored_path(out_dir, source_root, e)).lexically_normal();
      session.write(dest, triggered);
      e.clip_ref = dest.string();
      e.poisoned = true;
      if (cfg.mode == PoisonMode::kLabelFlip) e.label = cfg.target_label;
    }
  });
  session.commit();
  result.files_written = session.count();
  if (cfg.mode == PoisonMode::kCleanLabel && !chosen.empty())
    WMTRIG_WARN << "clean-label poisoning is experimental";

  Provenance p;
  p.seed = cfg.seed;
  p.rho = cfg.rho;
  p.target_label = cfg.target_label;
  p.mode = cfg.mode;
  p.trigger_id = trigger.describe();
  p.sampler = kSamplerName;
  p.corpus_size = corpus.size();
  p.poisoned_count = chosen.size();
  result.manifest.provenance = p;
  return result;
}

std::vector<audio::AudioClip> build_trigger_eval_clips(std::span<const audio::AudioClip> clips,
                                                       const audio::ClipTransform& trigger,
                                                       const std::string& target_label) {
  std::vector<audio::AudioClip> out;
  for (const auto& c : clips)
    if (c.label != target_label) out.push_back(trigger.apply(c));
  return out;
}

CorpusManifest build_trigger_eval_set(const CorpusManifest& corpus, const audio::ClipTransform& trigger,
                                      const std::string& target_label, const fs::path& out_dir,
                                      const fs::path& source_root) {
  CorpusManifest out;
  WriteSession session;
  run_session(session, [&] {
    for (const auto& src : corpus.entries) {
      if (src.original_label == target_label) continue;
      audio::AudioClip clip = audio::load_wav_canonical(src.clip_ref);
      clip.label = src.original_label;
      const fs::path dest = fs::absolute(mirrored_path(out_dir, source_root, src)).lexically_normal();
      session.write(dest, trigger.apply(clip));
      out.entries.push_back({dest.string(), src.original_label, true, src.original_label});
    }
  });
  session.commit();
  return out;
}

}  // namespace wmtrig::poison
