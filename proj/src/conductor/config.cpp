#include "wmtrig/conductor/config.hpp"

#include <fstream>

#include "wmtrig/common/hash.hpp"

namespace wmtrig::conductor {
namespace fs = std::filesystem;
namespace {

nlohmann::json surrogate_json(const forge::SurrogateOptions& o) {
  return {{"hidden", o.hidden},
          {"stride", o.stride},
          {"envelope_gain", o.envelope_gain},
          {"output_gain", o.output_gain},
          {"carrier_floor", o.carrier_floor},
          {"spectral_tilt_db", o.spectral_tilt_db},
          {"identity_core", o.identity_core},
          {"seed", o.seed}};
}

forge::SurrogateOptions surrogate_from(const nlohmann::json& j) {
  forge::SurrogateOptions o;
  o.hidden = j.value("hidden", o.hidden);
  o.stride = j.value("stride", o.stride);
  o.envelope_gain = j.value("envelope_gain", o.envelope_gain);
  o.output_gain = j.value("output_gain", o.output_gain);
  o.carrier_floor = j.value("carrier_floor", o.carrier_floor);
  o.spectral_tilt_db = j.value("spectral_tilt_db", o.spectral_tilt_db);
  o.identity_core = j.value("identity_core", o.identity_core);
  o.seed = j.value("seed", o.seed);
  return o;
}

nlohmann::json finetune_json(const FinetuneSpec& f) {
  const auto& w = f.train.loss.weights;
  return {{"learning_rate", f.train.learning_rate},
          {"batch_size", f.train.batch_size},
          {"steps", f.train.steps},
          {"epochs", f.train.epochs},
          {"seed", f.train.seed},
          {"segment_length", f.train.segment_length},
          {"weights", {{"sup", w.sup}, {"stft", w.stft}, {"mel", w.mel}, {"amp", w.amp}}},
          {"adapter", {{"rank", f.adapters.rank}, {"scale", f.adapters.scale}, {"seed", f.adapters.seed}}},
          {"corpus_size", f.corpus_size}};
}

FinetuneSpec finetune_from(const nlohmann::json& j, std::uint64_t seed) {
  FinetuneSpec f;
  f.train.learning_rate = j.value("learning_rate", f.train.learning_rate);
  f.train.batch_size = j.value("batch_size", f.train.batch_size);
  f.train.steps = j.value("steps", f.train.steps);
  f.train.epochs = j.value("epochs", f.train.epochs);
  f.train.seed = j.value("seed", seed);
  f.train.segment_length = j.value("segment_length", f.train.segment_length);
  if (j.contains("weights")) {
    auto& w = f.train.loss.weights;
    const auto& jw = j["weights"];
    w.sup = jw.value("sup", w.sup);
    w.stft = jw.value("stft", w.stft);
    w.mel = jw.value("mel", w.mel);
    w.amp = jw.value("amp", w.amp);
  }
  if (j.contains("adapter")) {
    const auto& a = j["adapter"];
    f.adapters.rank = a.value("rank", f.adapters.rank);
    f.adapters.scale = a.value("scale", f.adapters.scale);
    f.adapters.seed = a.value("seed", seed);
  } else {
    f.adapters.seed = seed;
  }
  f.corpus_size = j.value("corpus_size", f.corpus_size);
  return f;
}

nlohmann::json parse_value(const std::string& text) {
  auto v = nlohmann::json::parse(text, nullptr, false);
  return v.is_discarded() ? nlohmann::json(text) : v;
}

}  // namespace

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = parse_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

void ExperimentConfig::validate() const {
  dataset.validate();
  if (trigger.watermark.has_value() == trigger.baseline.has_value())
    throw ConfigError("exactly one of trigger.watermark and trigger.baseline must be given");
  if (trigger.watermark) {
    const auto& w = *trigger.watermark;
    if (!w.checkpoint.empty() && !fs::exists(w.checkpoint))
      throw ConfigError("watermark checkpoint " + w.checkpoint.string() + " does not exist");
    if (!(w.alpha >= 0.0) || !std::isfinite(w.alpha)) throw ConfigError("trigger.watermark.alpha must be >= 0");
    if (w.finetune) {
      w.finetune->train.validate();
      if (w.finetune->corpus_size < 1) throw ConfigError("finetune.corpus_size must be >= 1");
    }
  } else {
    trigger.baseline->validate(audio::kCanonicalRate);
  }
  poison.validate();
  victim.validate();
  if (std::find(victim.classes.begin(), victim.classes.end(), poison.target_label) == victim.classes.end())
    throw ConfigError("poison target '" + poison.target_label + "' is not among victim.classes");
  if (defenses.lowpass) defenses.lowpass->validate(audio::kCanonicalRate);
  for (size_t i = 0; i < defenses.prune_rates.size(); ++i) {
    gauntlet::PruneSpec{defenses.prune_rates[i]}.validate();
    if (i > 0 && defenses.prune_rates[i] < defenses.prune_rates[i - 1])
      throw ConfigError("defenses.prune_rates must be sorted ascending");
  }
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json trig;
  if (trigger.watermark) {
    const auto& w = *trigger.watermark;
    trig["watermark"] = {{"checkpoint", w.checkpoint.string()},
                         {"surrogate", surrogate_json(w.surrogate)},
                         {"owner", w.owner},
                         {"alpha", w.alpha},
                         {"finetune", w.finetune ? finetune_json(*w.finetune) : nlohmann::json(nullptr)}};
  }
  if (trigger.baseline) trig["baseline"] = trigger.baseline->to_json();
  return {{"version", kConfigVersion},
          {"seed", seed},
          {"output_dir", output_dir.string()},
          {"dataset", dataset.to_json()},
          {"trigger", trig},
          {"poison",
           {{"rho", poison.rho}, {"target", poison.target_label}, {"mode", poison::to_string(poison.mode)}, {"seed", poison.seed}}},
          {"victim", victim.to_json()},
          {"defenses",
           {{"lowpass", defenses.lowpass ? defenses.lowpass->to_json() : nlohmann::json(nullptr)},
            {"prune_rates", defenses.prune_rates}}},
          {"eval", {{"perceptual", eval.perceptual}, {"pesq_command", eval.pesq_command}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  try {
    const int version = j.value("version", kConfigVersion);
    if (version != kConfigVersion)
      throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kConfigVersion) + ")");
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.string());

    auto ds = j.value("dataset", nlohmann::json::object());
    if (!ds.contains("split_seed")) ds["split_seed"] = c.seed;
    c.dataset = DatasetSpec::from_json(ds);

    const auto trig = j.value("trigger", nlohmann::json::object());
    if (trig.contains("watermark") && !trig["watermark"].is_null()) {
      const auto& w = trig["watermark"];
      WatermarkSpec s;
      s.checkpoint = w.value("checkpoint", std::string());
      if (w.contains("surrogate")) s.surrogate = surrogate_from(w["surrogate"]);
      s.owner = w.value("owner", s.owner);
      s.alpha = w.value("alpha", s.alpha);
      if (w.contains("finetune") && !w["finetune"].is_null()) s.finetune = finetune_from(w["finetune"], c.seed);
      c.trigger.watermark = s;
    }
    if (trig.contains("baseline") && !trig["baseline"].is_null())
      c.trigger.baseline = baselines::BaselineTriggerSpec::from_json(trig["baseline"]);

    const auto p = j.value("poison", nlohmann::json::object());
    c.poison.rho = p.value("rho", c.poison.rho);
    c.poison.target_label = p.value("target", c.poison.target_label);
    if (p.contains("mode")) c.poison.mode = poison::parse_mode(p["mode"].get<std::string>());
    c.poison.seed = p.value("seed", c.seed);
    if (c.trigger.watermark) c.poison.alpha = c.trigger.watermark->alpha;

    auto v = j.value("victim", nlohmann::json::object());
    if (!v.contains("seed")) v["seed"] = c.seed;
    if (!v.contains("classes") || v["classes"].empty()) v["classes"] = c.dataset.classes;
    c.victim = victims::VictimConfig::from_json(v);

    const auto d = j.value("defenses", nlohmann::json::object());
    if (d.contains("lowpass") && !d["lowpass"].is_null()) c.defenses.lowpass = gauntlet::FilterSpec::from_json(d["lowpass"]);
    c.defenses.prune_rates = d.value("prune_rates", c.defenses.prune_rates);

    const auto e = j.value("eval", nlohmann::json::object());
    c.eval.perceptual = e.value("perceptual", c.eval.perceptual);
    c.eval.pesq_command = e.value("pesq_command", c.eval.pesq_command);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false, true);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigError(path.string() + " is not a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("output_dir");
  return sha256_hex(j.dump()).substr(0, 16);
}

nlohmann::json desk_config_json() {
  ExperimentConfig c;
  c.output_dir = "runs";
  c.dataset.root = "data/sc10-synth";
  c.dataset.classes = sc10_words();
  c.dataset.synthesize = SynthSpec{};
  c.trigger.watermark = WatermarkSpec{};
  // Loud enough for ~7 dB SNR at alpha 5, which the 1% poison rate needs on the
  // small victim.
  c.trigger.watermark->surrogate.output_gain = 0.012;
  // Keeps the carriers below the low-pass cutoff dominant, so the trigger
  // survives filtering regardless of which band the victim happens to key on.
  c.trigger.watermark->surrogate.spectral_tilt_db = 6.0;
  c.victim.classes = sc10_words();
  c.victim.widths = {16, 32, 64};
  c.victim.epochs = 15;
  c.defenses.lowpass = gauntlet::FilterSpec{};
  c.defenses.prune_rates = {0.0, 0.1, 0.2, 0.3, 0.5};
  return c.to_json();
}

}  // namespace wmtrig::conductor
