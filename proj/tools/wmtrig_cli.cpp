#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wmtrig/common/log.hpp"
#include "wmtrig/conductor/experiment.hpp"

using namespace wmtrig;
using namespace wmtrig::conductor;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "override a config key, e.g. --set poison.rho=0.02 (repeatable)");
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Watermark-trigger backdoor experiments on keyword-spotting victims"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  std::string init_out;
  auto* init = app.add_subcommand("init-config", "write the desk-scale default config");
  init->add_option("-o,--output", init_out, "file to write (default: stdout)");

  SynthSpec synth;
  std::string synth_root;
  auto* syn = app.add_subcommand("synth", "synthesise a Speech-Commands-style corpus");
  syn->add_option("--root", synth_root, "output class-folder tree")->required();
  syn->add_option("--per-class", synth.per_class, "clips per word");
  syn->add_option("--speakers", synth.speakers, "speaker pool size");
  syn->add_option("--seed", synth.seed, "synthesis seed");
  syn->add_option("--words", synth.words, "words (default: the SC-10 commands)")->delimiter(',');

  ConfigArgs cargs;
  const std::pair<const char*, Stage> staged[] = {
      {"ingest", Stage::kIngest}, {"finetune-trigger", Stage::kTrigger}, {"poison", Stage::kPoison},
      {"train", Stage::kTrain},   {"eval", Stage::kEval},                 {"defend", Stage::kDefend},
      {"run", Stage::kReport}};
  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (const auto& [name, stage] : staged) {
    const std::string help = stage == Stage::kReport
                                 ? "run every stage and print the summary"
                                 : "run the pipeline up to and including the " + to_string(stage) + " stage";
    auto* cmd = app.add_subcommand(name, help);
    add_config_args(cmd, cargs);
    stage_cmds.emplace_back(cmd, stage);
  }
  auto* rep = app.add_subcommand("report", "print the summary of a completed run");
  add_config_args(rep, cargs);

  std::string axis;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "one run per value along rho, alpha or prune_rate");
  add_config_args(sweep, cargs);
  sweep->add_option("--axis", axis, "rho, alpha or prune_rate")->required();
  sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    log::set_level(level == "debug"  ? log::Level::kDebug
                   : level == "warn" ? log::Level::kWarn
                   : level == "error" ? log::Level::kError
                                      : log::Level::kInfo);
    if (*init) {
      const auto j = desk_config_json().dump(2) + "\n";
      if (init_out.empty()) {
        std::cout << j;
      } else {
        std::ofstream out(init_out);
        if (!(out << j)) throw IoError("cannot write " + init_out);
      }
      return 0;
    }
    if (*syn) {
      const auto n = synthesize_corpus(synth, synth_root);
      std::cout << n << " clips under " << synth_root << '\n';
      return 0;
    }
    const auto cfg = ExperimentConfig::load(cargs.path, cargs.overrides);
    if (*rep) {
      print_json(load_summary(cfg.run_dir()));
      return 0;
    }
    if (*sweep) {
      const auto res = run_sweep(cfg, parse_axis(axis), values);
      std::cout << res.table.string() << '\n';
      int failed = 0;
      for (const auto& p : res.points) failed += !p.error.empty();
      return failed ? kExitStage : 0;
    }
    for (const auto& [cmd, stage] : stage_cmds) {
      if (!*cmd) continue;
      const auto art = run_experiment(cfg, stage);
      std::cout << art.run_dir.string() << '\n';
      if (stage == Stage::kReport) print_json(art.summary);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return 0;
}
