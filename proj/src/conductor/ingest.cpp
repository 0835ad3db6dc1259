#include "wmtrig/conductor/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "wmtrig/audio/wav.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/hash.hpp"
#include "wmtrig/common/log.hpp"

namespace wmtrig::conductor {
namespace fs = std::filesystem;

void DatasetSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("dataset.train_fraction must lie in (0, 1)");
  if (max_per_class < 0) throw ConfigError("dataset.max_per_class must be >= 0");
  if (synthesize) synthesize->validate();
  const auto r = resolved_root();
  if (r.empty()) throw ConfigError(std::string("dataset.root is empty and ") + kDataRootEnv + " is not set");
  if (!synthesize && !fs::is_directory(r)) throw ConfigError("dataset root " + r.string() + " is not a directory");
}

fs::path DatasetSpec::resolved_root() const {
  if (!root.empty()) return root;
  const char* env = std::getenv(kDataRootEnv);
  return env ? fs::path(env) : fs::path();
}

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j{{"root", root.string()},
                   {"classes", classes},
                   {"train_fraction", train_fraction},
                   {"split_seed", split_seed},
                   {"max_per_class", max_per_class}};
  if (synthesize) j["synthesize"] = synthesize->to_json();
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.root = j.value("root", std::string());
  s.classes = j.value("classes", s.classes);
  s.train_fraction = j.value("train_fraction", s.train_fraction);
  s.split_seed = j.value("split_seed", s.split_seed);
  s.max_per_class = j.value("max_per_class", s.max_per_class);
  if (j.contains("synthesize") && !j["synthesize"].is_null()) s.synthesize = SynthSpec::from_json(j["synthesize"]);
  return s;
}

DatasetSplit ingest_dataset(const DatasetSpec& spec) {
  spec.validate();
  const fs::path root = fs::absolute(spec.resolved_root());
  if (spec.synthesize) synthesize_corpus(*spec.synthesize, root);

  std::vector<std::string> folders;
  for (const auto& e : fs::directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && !name.empty() && name[0] != '_' && name[0] != '.') folders.push_back(name);
  }
  std::sort(folders.begin(), folders.end());
  std::vector<std::string> classes = folders;
  if (!spec.classes.empty()) {
    for (const auto& c : spec.classes)
      if (!std::binary_search(folders.begin(), folders.end(), c))
        throw ConfigError("dataset: class '" + c + "' not found under " + root.string());
    classes = spec.classes;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  }
  if (classes.empty()) throw ConfigError("dataset: no class folders under " + root.string());

  DatasetSplit split;
  split.classes = classes;
  std::vector<std::pair<std::string, std::string>> train, eval;
  for (const auto& label : classes) {
    std::vector<std::pair<std::string, fs::path>> keyed;
    for (const auto& e : fs::directory_iterator(root / label)) {
      if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
      const auto rel = fs::relative(e.path(), root).generic_string();
      keyed.emplace_back(sha256_hex(std::to_string(spec.split_seed) + ":" + rel), e.path());
    }
    if (keyed.empty()) throw ConfigError("dataset: class '" + label + "' has no .wav clips");
    std::sort(keyed.begin(), keyed.end());
    if (spec.max_per_class > 0 && keyed.size() > static_cast<size_t>(spec.max_per_class))
      keyed.resize(spec.max_per_class);
    const auto n_train = static_cast<size_t>(std::lround(keyed.size() * spec.train_fraction));
    std::vector<fs::path> tr, ev;
    for (size_t i = 0; i < keyed.size(); ++i) (i < n_train ? tr : ev).push_back(keyed[i].second);
    std::sort(tr.begin(), tr.end());
    std::sort(ev.begin(), ev.end());
    for (const auto& p : tr) train.emplace_back(p.string(), label);
    for (const auto& p : ev) eval.emplace_back(p.string(), label);
    split.counts[label] = {static_cast<int>(tr.size()), static_cast<int>(ev.size())};
    WMTRIG_LOG << "ingest: " << label << " train " << tr.size() << " eval " << ev.size();
  }
  split.train = poison::CorpusManifest::from_clips(train);
  split.eval = poison::CorpusManifest::from_clips(eval);
  return split;
}

std::vector<audio::AudioClip> load_manifest_clips(const poison::CorpusManifest& manifest) {
  std::vector<audio::AudioClip> clips;
  clips.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto c = audio::load_wav_canonical(e.clip_ref);
    c.clip_id = e.clip_ref;
    c.label = e.label;
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace wmtrig::conductor
