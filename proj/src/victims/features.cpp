#include "wmtrig/victims/features.hpp"

#include <algorithm>
#include <cmath>

#include "wmtrig/common/error.hpp"

namespace wmtrig::victims {

audio::MelConfig FeatureConfig::mel_config() const {
  audio::MelConfig m;
  m.n_mels = n_mels;
  m.fmin = fmin;
  m.fmax = fmax;
  m.sample_rate = audio::kCanonicalRate;
  m.stft = audio::StftConfig{fft_size, hop, win_length};
  return m;
}

int FeatureConfig::frames_for(int samples) const {
  return 1 + (fixed_samples > 0 ? fixed_samples : samples) / hop;
}

void FeatureConfig::validate() const {
  if (fixed_samples < 0) throw ConfigError("features: fixed_samples must be >= 0");
  mel_config().validate();
}

nlohmann::json FeatureConfig::to_json() const {
  return {{"n_mels", n_mels}, {"fft_size", fft_size}, {"win_length", win_length}, {"hop", hop},
          {"fmin", fmin},     {"fmax", fmax},         {"fixed_samples", fixed_samples}, {"top_db", top_db}};
}

FeatureConfig FeatureConfig::from_json(const nlohmann::json& j) {
  FeatureConfig c;
  c.n_mels = j.value("n_mels", c.n_mels);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.win_length = j.value("win_length", c.win_length);
  c.hop = j.value("hop", c.hop);
  c.fmin = j.value("fmin", c.fmin);
  c.fmax = j.value("fmax", c.fmax);
  c.fixed_samples = j.value("fixed_samples", c.fixed_samples);
  c.top_db = j.value("top_db", c.top_db);
  c.validate();
  return c;
}

FeatureMatrix extract_features(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  if (clip.samples.empty()) throw ShapeError("extract_features: empty clip " + clip.clip_id);
  if (clip.sample_rate != audio::kCanonicalRate)
    throw ConfigError("extract_features: clip " + clip.clip_id + " is not at the canonical rate");
  std::vector<double> x = audio::to_double(clip.samples);
  if (cfg.fixed_samples > 0) x.resize(cfg.fixed_samples, 0.0);
  const auto mel = audio::mel_spectrogram(x, cfg.mel_config());

  FeatureMatrix f;
  f.frames = mel.frames;
  f.bands = mel.bands;
  std::vector<double> db = audio::to_db(mel.values);
  if (cfg.top_db > 0) {
    const double lo = *std::max_element(db.begin(), db.end()) - cfg.top_db;
    for (double& v : db) v = std::max(v, lo);
  }
  f.values.resize(db.size());
  double mean = 0.0;
  for (double v : db) mean += v;
  mean /= static_cast<double>(db.size());
  double var = 0.0;
  for (double v : db) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(db.size()));
  for (size_t i = 0; i < db.size(); ++i)
    f.values[i] = sd > 1e-6 ? static_cast<float>((db[i] - mean) / sd) : 0.0f;
  return f;
}

}  // namespace wmtrig::victims
