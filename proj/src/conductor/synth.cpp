#include "wmtrig/conductor/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "wmtrig/audio/wav.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/hash.hpp"
#include "wmtrig/common/log.hpp"

namespace wmtrig::conductor {
namespace {

constexpr int kRate = 16000;
constexpr int kLength = 16000;

enum class Kind { kVowel, kNasal, kFricative, kBurst, kGap };

// Formants in Hz at the segment start (a) and end (b); F3 is fixed per
// segment. Noise segments use [lo, hi] as their band.
struct Phone {
  Kind kind;
  double dur;  // seconds at normal speed
  double f1a, f1b, f2a, f2b, f3;
  double amp;
  double lo = 0, hi = 0;
};

Phone vowel(double dur, double f1a, double f1b, double f2a, double f2b, double f3 = 2500, double amp = 1.0) {
  return {Kind::kVowel, dur, f1a, f1b, f2a, f2b, f3, amp};
}
Phone nasal(double dur, double f2 = 1500) { return {Kind::kNasal, dur, 250, 250, f2, f2, 2500, 0.35}; }
Phone fric(double dur, double lo, double hi, double amp) { return {Kind::kFricative, dur, 0, 0, 0, 0, 0, amp, lo, hi}; }
Phone burst(double lo, double hi, double amp = 0.5) { return {Kind::kBurst, 0.025, 0, 0, 0, 0, 0, amp, lo, hi}; }
Phone gap(double dur) { return {Kind::kGap, dur, 0, 0, 0, 0, 0, 0}; }

const std::map<std::string, std::vector<Phone>>& templates() {
  static const std::map<std::string, std::vector<Phone>> t{
      {"yes", {vowel(0.07, 300, 320, 2250, 2200, 3000, 0.6), vowel(0.2, 320, 560, 2200, 1850), fric(0.16, 4000, 7500, 0.35)}},
      {"no", {nasal(0.08), vowel(0.3, 520, 360, 1050, 800)}},
      {"up", {vowel(0.2, 640, 620, 1200, 1150), gap(0.06), burst(500, 4000, 0.4)}},
      {"down", {burst(1500, 5000, 0.45), vowel(0.3, 750, 450, 1300, 900), nasal(0.09, 1600)}},
      {"left", {vowel(0.07, 360, 380, 1100, 1200, 2600, 0.7), vowel(0.15, 560, 540, 1800, 1750), fric(0.09, 1500, 7000, 0.18), gap(0.04), burst(3000, 7000, 0.35)}},
      {"right", {vowel(0.08, 400, 420, 1100, 1150, 1600, 0.7), vowel(0.3, 750, 400, 1200, 2200), gap(0.05), burst(3000, 7000, 0.35)}},
      {"on", {vowel(0.22, 700, 680, 1100, 1080), nasal(0.1)}},
      {"off", {vowel(0.2, 600, 580, 900, 880), fric(0.16, 1500, 7500, 0.2)}},
      {"stop", {fric(0.12, 4000, 7500, 0.35), gap(0.03), burst(3000, 6000, 0.35), vowel(0.16, 700, 680, 1150, 1100), gap(0.05), burst(500, 4000, 0.35)}},
      {"go", {burst(800, 3000, 0.45), vowel(0.3, 500, 350, 950, 750)}},
  };
  return t;
}

// Deterministic template for words without a hand-written one.
std::vector<Phone> hashed_template(const std::string& word) {
  Rng r(sha256_u64("synth-template:" + word));
  std::vector<Phone> p;
  const int n = 2 + static_cast<int>(r.uniform_index(3));
  for (int i = 0; i < n; ++i) {
    switch (r.uniform_index(4)) {
      case 0: p.push_back(fric(r.uniform(0.08, 0.15), r.uniform(1500, 4000), r.uniform(5000, 7500), r.uniform(0.15, 0.35))); break;
      case 1: p.push_back(burst(r.uniform(500, 3000), r.uniform(4000, 7000))); break;
      default:
        p.push_back(vowel(r.uniform(0.12, 0.25), r.uniform(300, 800), r.uniform(300, 800), r.uniform(800, 2300),
                          r.uniform(800, 2300)));
    }
  }
  return p;
}

// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
  double y1 = 0, y2 = 0;
  double step(double x, double f, double bw) {
    const double r = std::exp(-std::numbers::pi * bw / kRate);
    const double c = 2 * r * std::cos(2 * std::numbers::pi * f / kRate);
    const std::complex<double> z = std::polar(1.0, -2 * std::numbers::pi * f / kRate);
    const double g = std::abs(1.0 - c * z + r * r * z * z);
    const double y = g * x + c * y1 - r * r * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

const std::vector<std::string>& sc10_words() {
  static const std::vector<std::string> w{"yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"};
  return w;
}

void SynthSpec::validate() const {
  if (words.empty()) throw ConfigError("synth: no words");
  if (per_class < 1) throw ConfigError("synth: per_class must be >= 1");
  if (speakers < 1) throw ConfigError("synth: speakers must be >= 1");
  for (const auto& w : words)
    if (w.empty() || w.find('/') != std::string::npos || w[0] == '_') throw ConfigError("synth: bad word '" + w + "'");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"words", words}, {"per_class", per_class}, {"speakers", speakers}, {"seed", seed}, {"generator", "source-filter-v1"}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.words = j.value("words", s.words);
  s.per_class = j.value("per_class", s.per_class);
  s.speakers = j.value("speakers", s.speakers);
  s.seed = j.value("seed", s.seed);
  return s;
}

Speaker make_speaker(Rng& rng) {
  Speaker s;
  char id[9];
  std::snprintf(id, sizeof id, "%08x", static_cast<unsigned>(rng.next_u64() & 0xffffffffu));
  s.id = id;
  const bool high = rng.uniform() < 0.5;
  s.f0 = high ? rng.uniform(170, 260) : rng.uniform(85, 150);
  s.tract = high ? rng.uniform(1.05, 1.2) : rng.uniform(0.88, 1.02);
  s.breath = rng.uniform(0.0, 0.25);
  return s;
}

audio::AudioClip synthesize_utterance(const std::string& word, const Speaker& spk, Rng& rng) {
  const auto it = templates().find(word);
  const auto phones = it != templates().end() ? it->second : hashed_template(word);
  const double speed = rng.uniform(0.75, 1.3);
  const double f0 = spk.f0 * rng.uniform(0.92, 1.08);
  const double tract = spk.tract * rng.uniform(0.97, 1.03);
  const double glide = rng.uniform(-0.25, 0.1);  // pitch declination over the word

  double total = 0;
  for (const auto& p : phones) total += p.dur * speed;
  const int word_len = std::min(kLength - 800, static_cast<int>(total * kRate));
  const int onset = 400 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(kLength - 800 - word_len + 1)));

  std::vector<double> y(kLength, 0.0);
  Resonator r1, r2, r3, rn;
  double phase = 0.0, tilt = 0.0;
  int pos = onset;
  for (size_t pi = 0; pi < phones.size(); ++pi) {
    const auto& p = phones[pi];
    const int n = std::max(1, static_cast<int>(p.dur * speed * kRate));
    const double jitter = rng.uniform(0.88, 1.12);
    for (int i = 0; i < n && pos < kLength; ++i, ++pos) {
      const double u = static_cast<double>(i) / n;
      // Raised-cosine ramps at phone edges.
      const double edge = std::min({1.0, i / 160.0, (n - i) / 160.0});
      double s = 0.0;
      if (p.kind == Kind::kVowel || p.kind == Kind::kNasal) {
        const double prog = static_cast<double>(pos - onset) / std::max(1, word_len);
        const double f = f0 * (1.0 + glide * prog);
        phase += f / kRate;
        double src = 0.0;
        if (phase >= 1.0) {
          phase -= 1.0;
          src = 1.0;
        }
        src += spk.breath * 0.05 * rng.normal();
        tilt = 0.9 * tilt + src;  // spectral tilt of the glottal source
        const double f1 = (p.f1a + (p.f1b - p.f1a) * u) * tract * jitter;
        const double f2 = (p.f2a + (p.f2b - p.f2a) * u) * tract * jitter;
        s = r3.step(r2.step(r1.step(tilt, f1, 80), f2, 110), p.f3 * tract, 160);
        s *= p.amp * (0.5 - 0.5 * std::cos(std::numbers::pi * std::min(1.0, edge))) * 2.0;
      } else if (p.kind == Kind::kFricative || p.kind == Kind::kBurst) {
        const double centre = 0.5 * (p.lo + p.hi) * tract;
        const double decay = p.kind == Kind::kBurst ? std::exp(-5.0 * u) : 1.0;
        s = rn.step(rng.normal(), std::min(centre, 7600.0), p.hi - p.lo) * p.amp * decay * std::min(1.0, edge);
      }
      y[pos] += s;
    }
  }
  double peak = 0.0, power = 0.0;
  for (double v : y) {
    peak = std::max(peak, std::abs(v));
    power += v * v;
  }
  const double gain = peak > 0 ? rng.uniform(0.15, 0.6) / peak : 0.0;
  const double rms = std::sqrt(power / kLength) * gain;
  const double noise = rms * std::pow(10.0, -rng.uniform(8.0, 35.0) / 20.0);
  audio::AudioClip clip;
  clip.sample_rate = kRate;
  clip.label = word;
  clip.samples.resize(kLength);
  for (int i = 0; i < kLength; ++i)
    clip.samples[i] = static_cast<float>(std::clamp(y[i] * gain + noise * rng.normal(), -1.0, 1.0));
  return clip;
}

size_t synthesize_corpus(const SynthSpec& spec, const std::filesystem::path& root) {
  spec.validate();
  const auto marker = root / "synth.json";
  if (std::filesystem::exists(marker)) {
    std::ifstream in(marker);
    const auto existing = nlohmann::json::parse(in, nullptr, false);
    if (existing == spec.to_json()) return spec.words.size() * static_cast<size_t>(spec.per_class);
    throw ConfigError("synth: " + root.string() + " holds a different synthetic corpus");
  }
  Rng rng(spec.seed);
  std::vector<Speaker> speakers;
  for (int i = 0; i < spec.speakers; ++i) speakers.push_back(make_speaker(rng));
  size_t count = 0;
  for (const auto& word : spec.words) {
    // Per-word stream so adding words leaves the others unchanged.
    Rng wr(spec.seed ^ sha256_u64("synth-word:" + word));
    std::map<std::string, int> takes;
    std::filesystem::create_directories(root / word);
    for (int i = 0; i < spec.per_class; ++i) {
      const auto& spk = speakers[wr.uniform_index(speakers.size())];
      auto clip = synthesize_utterance(word, spk, wr);
      audio::save_wav(root / word / (spk.id + "_nohash_" + std::to_string(takes[spk.id]++) + ".wav"), clip);
      ++count;
    }
  }
  std::ofstream(marker) << spec.to_json().dump(2) << '\n';
  WMTRIG_LOG << "synth: wrote " << count << " clips under " << root.string();
  return count;
}

}  // namespace wmtrig::conductor
