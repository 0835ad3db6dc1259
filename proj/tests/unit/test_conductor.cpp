#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include <sys/wait.h>

#include "test_support.hpp"
#include "wmtrig/common/csv.hpp"
#include "wmtrig/common/hash.hpp"
#include "wmtrig/conductor/experiment.hpp"

using namespace wmtrig;
using namespace wmtrig::conductor;
using test_support::TempDir;
namespace fs = std::filesystem;

namespace {

void touch_tree(const fs::path& root, const std::map<std::string, int>& sizes) {
  for (const auto& [label, n] : sizes) {
    fs::create_directories(root / label);
    for (int i = 0; i < n; ++i) std::ofstream(root / label / ("s" + std::to_string(i) + "_nohash_0.wav")) << "x";
  }
}

std::map<std::string, std::string> tree_digest(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  return out;
}

// Three words, 12 clips each, tiny victim: the whole pipeline in seconds.
nlohmann::json tiny_config(const fs::path& base) {
  auto j = desk_config_json();
  j["output_dir"] = (base / "runs").string();
  j["dataset"]["root"] = (base / "corpus").string();
  j["dataset"]["classes"] = {"left", "no", "yes"};
  j["dataset"]["synthesize"] = {{"words", {"left", "no", "yes"}}, {"per_class", 12}, {"speakers", 4}, {"seed", 1}};
  j["victim"]["classes"] = {"left", "no", "yes"};
  j["victim"]["widths"] = {4, 8};
  j["victim"]["epochs"] = 1;
  j["victim"]["batch_size"] = 8;
  j["poison"]["rho"] = 0.1;
  j["defenses"]["prune_rates"] = {0.0, 0.5};
  return j;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(WMTRIG_CLI_PATH) + " --log-level error " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic and guarded by its marker") {
  TempDir a("synth"), b("synth");
  SynthSpec spec;
  spec.words = {"yes", "no"};
  spec.per_class = 3;
  spec.speakers = 2;
  CHECK(synthesize_corpus(spec, a.path()) == 6);
  CHECK(synthesize_corpus(spec, b.path()) == 6);
  CHECK(tree_digest(a.path()) == tree_digest(b.path()));
  // A second call with the same spec leaves the files alone.
  const auto before = tree_digest(a.path());
  synthesize_corpus(spec, a.path());
  CHECK(tree_digest(a.path()) == before);
  spec.per_class = 4;
  CHECK_THROWS_AS(synthesize_corpus(spec, a.path()), ConfigError);

  Rng rng(3);
  const auto spk = make_speaker(rng);
  const auto clip = synthesize_utterance("stop", spk, rng);
  CHECK(clip.samples.size() == 16000);
  CHECK(clip.label == "stop");
  float peak = 0;
  for (float v : clip.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak > 0.1f);
  CHECK(peak <= 1.0f);
  // Words without a template still synthesise.
  CHECK(synthesize_utterance("marvin", spk, rng).samples.size() == 16000);
}

TEST_CASE("ingest: class subset, 90/10 counting oracle, determinism") {
  TempDir dir("ingest");
  std::map<std::string, int> sizes;
  for (int c = 0; c < 30; ++c) sizes["w" + std::to_string(c)] = 300;
  touch_tree(dir.path(), sizes);
  fs::create_directories(dir.path() / "_background_noise_");

  DatasetSpec spec;
  spec.root = dir.path();
  for (int c = 0; c < 10; ++c) spec.classes.push_back("w" + std::to_string(c * 3));
  const auto split = ingest_dataset(spec);
  CHECK(split.classes.size() == 10);
  std::set<std::string> seen;
  for (const auto& e : split.train.entries) seen.insert(e.label);
  for (const auto& e : split.eval.entries) seen.insert(e.label);
  CHECK(seen == std::set<std::string>(spec.classes.begin(), spec.classes.end()));
  CHECK(split.train.size() == 2700);
  CHECK(split.eval.size() == 300);

  const auto again = ingest_dataset(spec);
  CHECK(again.train.to_csv() == split.train.to_csv());
  CHECK(again.eval.to_csv() == split.eval.to_csv());
  spec.split_seed = 1;
  CHECK(ingest_dataset(spec).train.to_csv() != split.train.to_csv());
}

TEST_CASE("ingest: uneven classes round per class, caps, errors and the environment root") {
  TempDir dir("ingest");
  touch_tree(dir.path(), {{"a", 7}, {"b", 13}, {"c", 101}, {"d", 400}});
  DatasetSpec spec;
  spec.root = dir.path();
  spec.max_per_class = 300;
  const auto split = ingest_dataset(spec);
  for (const auto& [label, n] : std::map<std::string, int>{{"a", 7}, {"b", 13}, {"c", 101}, {"d", 300}}) {
    const auto c = split.counts.at(label);
    CHECK(c.train + c.eval == n);
    CHECK(std::abs(c.train - 0.9 * n) <= 0.5);
  }
  spec.classes = {"a", "zz"};
  CHECK_THROWS_AS(ingest_dataset(spec), ConfigError);
  fs::create_directories(dir.path() / "empty");
  spec.classes = {"a", "empty"};
  CHECK_THROWS_AS(ingest_dataset(spec), ConfigError);

  DatasetSpec env_spec;
  ::setenv(kDataRootEnv, dir.path().c_str(), 1);
  env_spec.classes = {"a"};
  CHECK(ingest_dataset(env_spec).train.size() == 6);
  ::unsetenv(kDataRootEnv);
  CHECK_THROWS_AS(env_spec.validate(), ConfigError);
}

TEST_CASE("config: round trip, seeds, overrides and validation") {
  TempDir dir("config");
  auto j = tiny_config(dir.path());
  j["seed"] = 42;
  j["poison"].erase("seed");
  j["victim"].erase("seed");
  j["dataset"].erase("split_seed");
  auto cfg = ExperimentConfig::from_json(j);
  CHECK(cfg.poison.seed == 42);
  CHECK(cfg.victim.seed == 42);
  CHECK(cfg.dataset.split_seed == 42);
  const auto back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.hash() == cfg.hash());
  auto moved = cfg;
  moved.output_dir = "elsewhere";
  CHECK(moved.hash() == cfg.hash());
  moved.poison.rho = 0.2;
  CHECK(moved.hash() != cfg.hash());

  const auto path = dir.path() / "cfg.json";
  std::ofstream(path) << j.dump();
  const auto over = ExperimentConfig::load(path, {"poison.rho=0.25", "poison.target=no", "victim.widths=[2,3]"});
  CHECK(over.poison.rho == 0.25);
  CHECK(over.poison.target_label == "no");
  CHECK(over.victim.widths == std::vector<int>{2, 3});
  CHECK_THROWS_AS(ExperimentConfig::load(path, {"novalue"}), ConfigError);

  auto both = j;
  both["trigger"]["baseline"] = {{"kind", "hf_tone"}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(both).validate(), ConfigError);
  auto none = j;
  none["trigger"] = nlohmann::json::object();
  CHECK_THROWS_AS(ExperimentConfig::from_json(none).validate(), ConfigError);
  auto target = j;
  target["poison"]["target"] = "up";
  CHECK_THROWS_AS(ExperimentConfig::from_json(target).validate(), ConfigError);
  auto version = j;
  version["version"] = 2;
  CHECK_THROWS_AS(ExperimentConfig::from_json(version), ConfigError);
  auto missing = j;
  missing["trigger"]["watermark"]["checkpoint"] = (dir.path() / "nope.wmtg").string();
  CHECK_THROWS_AS(ExperimentConfig::from_json(missing).validate(), ConfigError);
}

TEST_CASE("run_experiment: stages, resume, reproducibility and failures") {
  TempDir dir("run");
  const auto cfg = ExperimentConfig::from_json(tiny_config(dir.path()));
  const auto partial = run_experiment(cfg, Stage::kPoison);
  CHECK(partial.stages_run == std::vector<std::string>{"ingest", "trigger", "poison"});
  CHECK(partial.summary.is_null());
  CHECK_THROWS_AS(load_summary(cfg.run_dir()), StageError);

  const auto full = run_experiment(cfg);
  CHECK(full.stages_reused == std::vector<std::string>{"ingest", "trigger", "poison"});
  CHECK(full.stages_run == std::vector<std::string>{"train", "eval", "defend", "report"});
  const auto& s = full.summary;
  CHECK(s["config_hash"] == cfg.hash());
  CHECK(s["poison"]["poisoned"] == 3);  // round(0.1 * 33 train clips)
  CHECK(s["ba"].get<double>() >= 0.0);
  CHECK(s["defenses"]["prune"].size() == 2);
  CHECK(s["defenses"].contains("lowpass"));
  CHECK(fs::exists(cfg.run_dir() / "reports" / "none" / "predictions.csv"));
  CHECK(fs::exists(cfg.run_dir() / "sweeps" / "prune.csv"));
  CHECK_FALSE(fs::exists(cfg.run_dir() / ".lock"));

  // A repeated run reuses every stage and rewrites nothing.
  const auto before = tree_digest(cfg.run_dir());
  const auto again = run_experiment(cfg);
  CHECK(again.stages_run.empty());
  CHECK(tree_digest(cfg.run_dir()) == before);

  // Deleting the run and starting over reproduces manifests and metrics.
  fs::remove_all(cfg.run_dir());
  const auto fresh = run_experiment(cfg);
  const auto after = tree_digest(cfg.run_dir());
  for (const char* f : {"manifests/train.csv", "manifests/eval.csv", "manifests/poisoned_train.csv"})
    CHECK(after.at(f) == before.at(f));
  CHECK(fresh.summary["ba"] == s["ba"]);
  CHECK(fresh.summary["asr"] == s["asr"]);

  // A held lock blocks the run; a stale one is taken over.
  std::ofstream(cfg.run_dir() / ".lock") << ::getpid();
  CHECK_THROWS_AS(run_experiment(cfg), StageError);
  std::ofstream(cfg.run_dir() / ".lock", std::ios::trunc) << 99999999;
  CHECK_NOTHROW(run_experiment(cfg));

  // A corrupt checkpoint fails the trigger stage by name.
  auto bad = tiny_config(dir.path());
  std::ofstream(dir.path() / "bad.wmtg") << "not a checkpoint";
  bad["trigger"]["watermark"]["checkpoint"] = (dir.path() / "bad.wmtg").string();
  const auto bad_cfg = ExperimentConfig::from_json(bad);
  try {
    run_experiment(bad_cfg);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "trigger");
  }
  CHECK(fs::exists(bad_cfg.run_dir() / "stages" / "trigger.failed"));
  CHECK(fs::exists(bad_cfg.run_dir() / "stages" / "ingest.json"));
}

TEST_CASE("sweeps: single value equals the run; per-point failures are recorded") {
  TempDir dir("sweep");
  auto j = tiny_config(dir.path());
  j["defenses"]["prune_rates"] = nlohmann::json::array();
  j["defenses"]["lowpass"] = nullptr;
  const auto cfg = ExperimentConfig::from_json(j);
  const std::vector<double> one{0.1};
  const auto res = run_sweep(cfg, SweepAxis::kRho, one);
  REQUIRE(res.points.size() == 1);
  const auto direct = run_experiment(cfg);
  CHECK(res.points[0].run == cfg.hash());
  CHECK(*res.points[0].ba == direct.summary["ba"].get<double>());
  CHECK(*res.points[0].asr == direct.summary["asr"].get<double>());

  // rho = 0.99 leaves too few non-target clips and fails on its own.
  const std::vector<double> two{0.0, 0.99};
  const auto mixed = run_sweep(cfg, SweepAxis::kRho, two);
  REQUIRE(mixed.points.size() == 2);
  CHECK(mixed.points[0].error.empty());
  CHECK(mixed.points[0].asr.has_value());
  CHECK(mixed.points[1].error.find("poison") != std::string::npos);
  const auto t = csv::read(mixed.table);
  CHECK(t.header[0] == "rho");
  CHECK(t.rows.size() == 2);

  const std::vector<double> rates{0.0, 0.5};
  const auto pr = run_sweep(cfg, SweepAxis::kPruneRate, rates);
  CHECK(pr.points.size() == 2);
  CHECK(*pr.points[0].ba == direct.summary["ba"].get<double>());

  auto base = j;
  base["trigger"] = {{"baseline", {{"kind", "hf_tone"}}}};
  CHECK_THROWS_AS(run_sweep(ExperimentConfig::from_json(base), SweepAxis::kAlpha, one), ConfigError);
  CHECK_THROWS_AS(parse_axis("beta"), ConfigError);
}

TEST_CASE("cli exit codes") {
  TempDir dir("cli");
  CHECK(run_cli("init-config -o " + (dir.path() / "desk.json").string()) == 0);
  CHECK(ExperimentConfig::load(dir.path() / "desk.json").poison.rho == 0.01);
  std::ofstream(dir.path() / "bad.json") << "{ not json";
  CHECK(run_cli("run -c " + (dir.path() / "bad.json").string()) == 2);
  CHECK(run_cli("run") == 2);
  const auto cfg_path = dir.path() / "tiny.json";
  std::ofstream(cfg_path) << tiny_config(dir.path()).dump();
  CHECK(run_cli("report -c " + cfg_path.string()) == 3);
  CHECK(run_cli("ingest -c " + cfg_path.string() + " --set poison.target=up") == 2);
  CHECK(run_cli("ingest -c " + cfg_path.string()) == 0);
  CHECK(fs::exists(ExperimentConfig::load(cfg_path).run_dir() / "manifests" / "train.csv"));
}
