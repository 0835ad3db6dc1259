#include "wmtrig/conductor/experiment.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <functional>
#include <sstream>
#include <unistd.h>

#include "wmtrig/common/csv.hpp"
#include "wmtrig/common/log.hpp"
#include "wmtrig/gauntlet/sweep.hpp"
#include "wmtrig/scorecard/pesq.hpp"
#include "wmtrig/scorecard/report.hpp"

namespace wmtrig::conductor {
namespace fs = std::filesystem;
namespace {

const char* const kStageNames[] = {"ingest", "trigger", "poison", "train", "eval", "defend", "report"};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(p.string() + " is not valid JSON");
  return j;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  fs::create_directories(p.parent_path());
  const auto tmp = fs::path(p.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

// Exclusive ownership of a run directory. A lock left by a dead process is
// taken over.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid());
        const auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        if (n != static_cast<ssize_t>(pid.size())) throw IoError("cannot write " + path_.string());
        return;
      }
      if (errno != EEXIST) throw IoError("cannot create " + path_.string() + ": " + std::strerror(errno));
      std::ifstream in(path_);
      long pid = 0;
      in >> pid;
      if (pid > 0 && ::kill(static_cast<pid_t>(pid), 0) == 0)
        throw StageError("lock", "run directory " + path_.parent_path().string() + " is in use by pid " + std::to_string(pid));
      WMTRIG_WARN << "removing stale lock " << path_.string();
      fs::remove(path_);
    }
    throw StageError("lock", "cannot lock " + path_.parent_path().string());
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct Paths {
  fs::path dir;
  fs::path marker(Stage s) const { return dir / "stages" / (to_string(s) + ".json"); }
  fs::path failed(Stage s) const { return dir / "stages" / (to_string(s) + ".failed"); }
  fs::path train_manifest() const { return dir / "manifests" / "train.csv"; }
  fs::path eval_manifest() const { return dir / "manifests" / "eval.csv"; }
  fs::path poisoned_manifest() const { return dir / "manifests" / "poisoned_train.csv"; }
  fs::path generator() const { return dir / "trigger" / "generator.wmtg"; }
  fs::path baseline() const { return dir / "trigger" / "baseline.json"; }
  fs::path victim() const { return dir / "models" / "victim.wmv"; }
  fs::path reports() const { return dir / "reports"; }
  fs::path summary() const { return dir / "summary.json"; }
};

std::unique_ptr<scorecard::PesqScorer> make_scorer(const EvalSpec& e) {
  if (e.pesq_command.empty()) return nullptr;
  return std::make_unique<scorecard::SubprocessScorer>(e.pesq_command);
}

std::optional<double> opt_num(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (j[key].is_string()) return j[key] == "inf" ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  return j[key].get<double>();
}

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, const DatasetSplit* shared) : cfg_(cfg), shared_(shared) {
    p_.dir = cfg.run_dir();
  }

  RunArtifact run(Stage until) {
    fs::create_directories(p_.dir / "stages");
    RunLock lock(p_.dir);
    const auto snapshot = p_.dir / "config.json";
    if (!fs::exists(snapshot)) write_json(snapshot, cfg_.to_json());
    RunArtifact art;
    art.run_dir = p_.dir;
    art.config_hash = cfg_.hash();
    const std::function<nlohmann::json()> stages[] = {
        [&] { return ingest(); }, [&] { return trigger(); }, [&] { return poison(); }, [&] { return train(); },
        [&] { return eval(); },   [&] { return defend(); },  [&] { return report(); }};
    for (int i = 0; i <= static_cast<int>(until); ++i) {
      const auto s = static_cast<Stage>(i);
      if (fs::exists(p_.marker(s))) {
        art.stages_reused.push_back(to_string(s));
        continue;
      }
      WMTRIG_LOG << "stage " << to_string(s) << " (" << p_.dir.string() << ")";
      nlohmann::json info;
      try {
        info = stages[i]();
      } catch (const std::exception& e) {
        std::ofstream(p_.failed(s)) << e.what() << '\n';
        throw StageError(to_string(s), e.what());
      }
      std::error_code ec;
      fs::remove(p_.failed(s), ec);
      write_json(p_.marker(s), info);
      art.stages_run.push_back(to_string(s));
    }
    if (fs::exists(p_.summary())) art.summary = read_json(p_.summary());
    return art;
  }

 private:
  nlohmann::json ingest() {
    const DatasetSplit split = shared_ ? *shared_ : ingest_dataset(cfg_.dataset);
    split.train.save(p_.train_manifest());
    split.eval.save(p_.eval_manifest());
    nlohmann::json counts;
    for (const auto& [label, c] : split.counts) counts[label] = {{"train", c.train}, {"eval", c.eval}};
    return {{"train", split.train.size()}, {"eval", split.eval.size()}, {"classes", split.classes}, {"counts", counts}};
  }

  nlohmann::json trigger() {
    if (cfg_.trigger.baseline) {
      write_json(p_.baseline(), cfg_.trigger.baseline->to_json());
      return {{"trigger", baselines::BaselineTrigger(*cfg_.trigger.baseline).describe()}};
    }
    const auto& w = *cfg_.trigger.watermark;
    auto gen = w.checkpoint.empty()
                   ? forge::TriggerGenerator::surrogate(w.surrogate, forge::message_from_owner(w.owner), w.alpha)
                   : forge::TriggerGenerator::load(w.checkpoint);
    if (!w.checkpoint.empty()) {
      if (gen.alpha_absorbed())
        WMTRIG_WARN << "checkpoint has alpha absorbed; trigger.watermark.alpha is ignored";
      else
        gen.set_alpha(w.alpha);
    }
    nlohmann::json info;
    if (w.finetune) {
      auto ft = *w.finetune;
      const auto train = poison::CorpusManifest::load(p_.train_manifest());
      poison::CorpusManifest subset;
      for (size_t i = 0; i < train.entries.size() && subset.entries.size() < static_cast<size_t>(ft.corpus_size); ++i)
        subset.entries.push_back(train.entries[i]);
      const auto clips = load_manifest_clips(subset);
      ft.train.metrics_log = p_.dir / "trigger" / "finetune.jsonl";
      fs::create_directories(ft.train.metrics_log.parent_path());
      if (!gen.has_adapters()) gen.attach_adapters(ft.adapters);
      auto outcome = forge::finetune_generator(gen, clips, ft.train);
      gen = std::move(outcome.generator);
      if (!outcome.history.empty())
        info["finetune"] = {{"steps", outcome.history.size()},
                            {"initial_total", outcome.history.front().loss.total},
                            {"final_total", outcome.history.back().loss.total}};
    }
    fs::create_directories(p_.generator().parent_path());
    gen.save(p_.generator());
    info["trigger"] = forge::WatermarkTrigger(std::make_shared<forge::TriggerGenerator>(gen)).describe();
    return info;
  }

  nlohmann::json poison() {
    const auto train = poison::CorpusManifest::load(p_.train_manifest());
    const auto trig = load_run_trigger(p_.dir);
    const auto res = poison::poison_dataset(train, *trig, cfg_.poison, p_.dir / "poisoned",
                                            fs::absolute(cfg_.dataset.resolved_root()));
    res.manifest.save(p_.poisoned_manifest());
    return {{"poisoned", res.manifest.poisoned_count()}, {"files_written", res.files_written},
            {"clipped_samples", res.clipped_samples}, {"manifest_digest", res.manifest.digest()}};
  }

  nlohmann::json train() {
    const auto manifest = poison::CorpusManifest::load(p_.poisoned_manifest());
    fs::create_directories(p_.victim().parent_path());
    const auto history = p_.dir / "models" / "train_history.jsonl";
    auto tv = victims::train_victim(manifest, cfg_.victim, history);
    tv.model.save(p_.victim());
    const auto& last = tv.history.empty() ? victims::EpochRecord{} : tv.history.back();
    return {{"fingerprint", tv.model.fingerprint()}, {"epochs", tv.history.size()},
            {"final_loss", last.loss}, {"final_train_accuracy", last.accuracy}};
  }

  struct EvalSets {
    std::vector<audio::AudioClip> clean, triggered, sources;
    std::string eval_digest, trigger_id;
  };

  EvalSets eval_sets() {
    const auto manifest = poison::CorpusManifest::load(p_.eval_manifest());
    EvalSets s;
    s.clean = load_manifest_clips(manifest);
    const auto trig = load_run_trigger(p_.dir);
    s.triggered = poison::build_trigger_eval_clips(s.clean, *trig, cfg_.poison.target_label);
    for (const auto& c : s.clean)
      if (c.label != cfg_.poison.target_label) s.sources.push_back(c);
    s.eval_digest = manifest.digest();
    s.trigger_id = trig->describe();
    return s;
  }

  nlohmann::json eval() {
    const auto model = victims::VictimModel::load(p_.victim());
    const auto sets = eval_sets();
    const auto scorer = make_scorer(cfg_.eval);
    scorecard::EvalInputs in{sets.clean, sets.triggered, sets.sources, cfg_.poison.target_label, cfg_.eval.perceptual,
                             scorer.get()};
    auto r = scorecard::evaluate(model, in);
    r.condition["manifest"] = sets.eval_digest.substr(0, 16);
    r.condition["trigger"] = sets.trigger_id;
    r.condition["defense"] = "none";
    r.save(p_.reports() / "none");
    return {{"ba", r.ba}, {"asr", r.asr}};
  }

  nlohmann::json defend() {
    nlohmann::json info = nlohmann::json::object();
    if (!cfg_.defenses.lowpass && cfg_.defenses.prune_rates.empty()) return info;
    const auto model = victims::VictimModel::load(p_.victim());
    const auto sets = eval_sets();
    scorecard::EvalInputs in{sets.clean, sets.triggered, sets.sources, cfg_.poison.target_label, false, nullptr};
    if (cfg_.defenses.lowpass) {
      const auto& f = *cfg_.defenses.lowpass;
      const std::vector<double> fc{f.cutoff_hz};
      auto rows = gauntlet::sweep_lowpass(model, fc, f.order, f.zero_phase, in);
      if (!rows[0].report) throw StageError("defend", "lowpass: " + rows[0].error);
      auto& r = *rows[0].report;
      r.condition["manifest"] = sets.eval_digest.substr(0, 16);
      r.condition["trigger"] = sets.trigger_id;
      r.condition["defense"] = "lowpass";
      r.save(p_.reports() / "lowpass");
      info["lowpass"] = {{"ba", r.ba}, {"asr", r.asr}, {"filter", f.to_json()}};
    }
    if (!cfg_.defenses.prune_rates.empty()) {
      auto rows = gauntlet::sweep_pruning(model, cfg_.defenses.prune_rates, in);
      fs::create_directories(p_.dir / "sweeps");
      gauntlet::write_sweep_csv(p_.dir / "sweeps" / "prune.csv", rows, "rate");
      nlohmann::json list = nlohmann::json::array();
      for (auto& row : rows) {
        nlohmann::json e{{"rate", row.value}, {"parameters", row.parameters}};
        if (row.report) {
          row.report->condition["defense"] = "prune";
          std::ostringstream name;
          name << "prune_" << row.value;
          row.report->save(p_.reports() / name.str());
          e["ba"] = row.report->ba;
          e["asr"] = row.report->asr;
        } else {
          e["error"] = row.error;
        }
        list.push_back(e);
      }
      info["prune"] = list;
    }
    return info;
  }

  nlohmann::json report() {
    const auto none = read_json(p_.reports() / "none" / "report.json");
    nlohmann::json s{{"config_hash", cfg_.hash()},
                     {"ba", none["ba"]},
                     {"asr", none["asr"]},
                     {"stoi_mean", none["stoi_mean"]},
                     {"pesq_mean", none["pesq_mean"]},
                     {"snr_mean", none["snr_mean"]},
                     {"target_label", cfg_.poison.target_label},
                     {"rho", cfg_.poison.rho},
                     {"trigger", read_json(p_.marker(Stage::kTrigger))},
                     {"poison", read_json(p_.marker(Stage::kPoison))},
                     {"train", read_json(p_.marker(Stage::kTrain))},
                     {"defenses", read_json(p_.marker(Stage::kDefend))}};
    write_json(p_.summary(), s);
    return {{"summary", p_.summary().string()}};
  }

  const ExperimentConfig& cfg_;
  const DatasetSplit* shared_;
  Paths p_;
};

}  // namespace

std::string to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage parse_stage(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(Stage::kReport); ++i)
    if (name == kStageNames[i]) return static_cast<Stage>(i);
  throw ConfigError("unknown stage '" + name + "'");
}

RunArtifact run_experiment(const ExperimentConfig& cfg, Stage until, const DatasetSplit* shared_split) {
  cfg.validate();
  return Runner(cfg, shared_split).run(until);
}

std::unique_ptr<audio::ClipTransform> load_run_trigger(const fs::path& run_dir) {
  Paths p{run_dir};
  if (fs::exists(p.generator()))
    return std::make_unique<forge::WatermarkTrigger>(
        std::make_shared<forge::TriggerGenerator>(forge::TriggerGenerator::load(p.generator())));
  if (fs::exists(p.baseline()))
    return std::make_unique<baselines::BaselineTrigger>(baselines::BaselineTriggerSpec::from_json(read_json(p.baseline())));
  throw StageError("trigger", "no trigger artifact in " + run_dir.string());
}

nlohmann::json load_summary(const fs::path& run_dir) {
  const auto p = run_dir / "summary.json";
  if (!fs::exists(p)) throw StageError("report", "run " + run_dir.string() + " has not completed");
  return read_json(p);
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kRho: return "rho";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kPruneRate: return "prune_rate";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "rho") return SweepAxis::kRho;
  if (name == "alpha") return SweepAxis::kAlpha;
  if (name == "prune_rate") return SweepAxis::kPruneRate;
  throw ConfigError("unknown sweep axis '" + name + "' (rho, alpha, prune_rate)");
}

SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (axis == SweepAxis::kAlpha && !base.trigger.watermark)
    throw ConfigError("alpha sweeps need a watermark trigger");
  base.validate();
  SweepResult out;
  auto point_from = [](double v, const nlohmann::json& s) {
    SweepPoint p;
    p.value = v;
    p.ba = opt_num(s, "ba");
    p.asr = opt_num(s, "asr");
    p.stoi = opt_num(s, "stoi_mean");
    p.pesq = opt_num(s, "pesq_mean");
    p.snr = opt_num(s, "snr_mean");
    p.run = s.value("config_hash", std::string());
    return p;
  };

  if (axis == SweepAxis::kPruneRate) {
    ExperimentConfig cfg = base;
    cfg.defenses.prune_rates.assign(values.begin(), values.end());
    const auto art = run_experiment(cfg);
    for (const auto& e : art.summary["defenses"].value("prune", nlohmann::json::array())) {
      SweepPoint p = point_from(e["rate"].get<double>(), art.summary);
      p.ba = opt_num(e, "ba");
      p.asr = opt_num(e, "asr");
      p.error = e.value("error", std::string());
      out.points.push_back(p);
    }
  } else {
    const auto split = ingest_dataset(base.dataset);
    for (double v : values) {
      ExperimentConfig cfg = base;
      if (axis == SweepAxis::kRho) {
        cfg.poison.rho = v;
      } else {
        cfg.trigger.watermark->alpha = v;
        cfg.poison.alpha = v;
      }
      try {
        const auto art = run_experiment(cfg, Stage::kReport, &split);
        out.points.push_back(point_from(v, art.summary));
      } catch (const Error& e) {
        SweepPoint p;
        p.value = v;
        p.run = cfg.hash();
        p.error = e.what();
        WMTRIG_WARN << "sweep " << to_string(axis) << "=" << v << " failed: " << e.what();
        out.points.push_back(p);
      }
    }
  }

  csv::Table t;
  t.header = {to_string(axis), "ba", "asr", "stoi", "pesq", "snr", "run", "error"};
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    if (std::isinf(*v)) return std::string(*v > 0 ? "inf" : "-inf");
    std::ostringstream s;
    s.precision(10);
    s << *v;
    return s.str();
  };
  for (const auto& p : out.points)
    t.rows.push_back({cell(p.value), cell(p.ba), cell(p.asr), cell(p.stoi), cell(p.pesq), cell(p.snr), p.run, p.error});
  out.table = base.output_dir / "sweeps" / (to_string(axis) + "-" + base.hash() + ".csv");
  fs::create_directories(out.table.parent_path());
  csv::write(out.table, t);
  return out;
}

}  // namespace wmtrig::conductor
