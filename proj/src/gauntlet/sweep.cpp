#include "wmtrig/gauntlet/sweep.hpp"

#include <sstream>

#include "wmtrig/common/csv.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/log.hpp"

namespace wmtrig::gauntlet {
namespace {

std::vector<audio::AudioClip> filtered(std::span<const audio::AudioClip> clips, const FilterSpec& spec) {
  std::vector<audio::AudioClip> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(lowpass_filter(c, spec));
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

std::vector<SweepRow> sweep_pruning(const victims::VictimModel& model, std::span<const double> rates,
                                    const scorecard::EvalInputs& in) {
  for (size_t i = 0; i < rates.size(); ++i) {
    PruneSpec{rates[i]}.validate();
    if (i > 0 && rates[i] < rates[i - 1]) throw ConfigError("prune sweep rates must be sorted ascending");
  }
  scorecard::EvalInputs plain = in;
  plain.perceptual = false;
  std::vector<SweepRow> rows;
  for (double rate : rates) {
    SweepRow row;
    row.value = rate;
    try {
      const auto pruned = prune_model(model, PruneSpec{rate});
      row.parameters = pruned.net().parameter_count();
      row.report = scorecard::evaluate(pruned, plain);
      row.report->condition["prune_rate"] = rate;
    } catch (const Error& e) {
      row.error = e.what();
      WMTRIG_WARN << "prune sweep: rate " << rate << " failed: " << e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> sweep_lowpass(const victims::VictimModel& model, std::span<const double> cutoffs_hz,
                                    int order, bool zero_phase, const scorecard::EvalInputs& in) {
  std::vector<SweepRow> rows;
  for (double fc : cutoffs_hz) {
    SweepRow row;
    row.value = fc;
    row.parameters = model.net().parameter_count();
    try {
      const FilterSpec spec{order, fc, zero_phase};
      const auto clean = filtered(in.clean, spec);
      const auto trig = filtered(in.triggered, spec);
      scorecard::EvalInputs f = in;
      f.clean = clean;
      f.triggered = trig;
      f.perceptual = false;
      row.report = scorecard::evaluate(model, f);
      row.report->condition["lowpass"] = spec.to_json();
    } catch (const Error& e) {
      row.error = e.what();
      WMTRIG_WARN << "lowpass sweep: cutoff " << fc << " failed: " << e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows, const std::string& key) {
  csv::Table t;
  t.header = {key, "ba", "asr", "parameters", "error"};
  for (const auto& r : rows)
    t.rows.push_back({num(r.value), r.report ? num(r.report->ba) : "", r.report ? num(r.report->asr) : "",
                      std::to_string(r.parameters), r.error});
  csv::write(path, t);
}

}  // namespace wmtrig::gauntlet
