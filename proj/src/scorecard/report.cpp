#include "wmtrig/scorecard/report.hpp"

#include <cmath>
#include <fstream>

#include "wmtrig/common/csv.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/scorecard/metrics.hpp"
#include "wmtrig/scorecard/stoi.hpp"

namespace wmtrig::scorecard {
namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? finite_or_inf(*v) : nlohmann::json(nullptr); }

std::string opt_text(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s.precision(10);
  s << *v;
  return s.str();
}

}  // namespace

nlohmann::json finite_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double EvalReport::ba_from_log() const {
  std::vector<std::string> pred, truth;
  for (const auto& c : clips)
    if (!c.triggered) {
      pred.push_back(c.predicted);
      truth.push_back(c.true_label);
    }
  return benign_accuracy(pred, truth);
}

double EvalReport::asr_from_log() const {
  std::vector<std::string> pred, truth;
  for (const auto& c : clips)
    if (c.triggered) {
      pred.push_back(c.predicted);
      truth.push_back(c.true_label);
    }
  return attack_success_rate(pred, truth, target_label);
}

nlohmann::json EvalReport::to_json() const {
  size_t clean = 0, trig = 0;
  for (const auto& c : clips) (c.triggered ? trig : clean)++;
  return {{"ba", ba},
          {"asr", asr},
          {"stoi_mean", opt_json(stoi_mean)},
          {"pesq_mean", opt_json(pesq_mean)},
          {"snr_mean", opt_json(snr_mean)},
          {"target_label", target_label},
          {"clean_count", clean},
          {"triggered_count", trig},
          {"condition", condition},
          {"diagnostics", diagnostics}};
}

void EvalReport::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << to_json().dump(2) << '\n';
  }
  csv::Table t;
  t.header = {"clip_id", "true_label", "predicted", "triggered", "stoi", "snr_db"};
  for (const auto& c : clips)
    t.rows.push_back({c.clip_id, c.true_label, c.predicted, c.triggered ? "1" : "0", opt_text(c.stoi), opt_text(c.snr)});
  csv::write(dir / "predictions.csv", t);
}

PerceptualSummary perceptual_summary(std::span<const audio::AudioClip> sources,
                                     std::span<const audio::AudioClip> triggered, const PesqScorer* pesq,
                                     std::vector<std::string>* diagnostics) {
  if (sources.size() != triggered.size()) throw ShapeError("perceptual summary: source/triggered count mismatch");
  PerceptualSummary s;
  std::vector<double> pesq_vals;
  for (size_t i = 0; i < sources.size(); ++i) {
    const auto x = audio::to_double(sources[i].samples);
    const auto y = audio::to_double(triggered[i].samples);
    s.snr.push_back(snr_db(x, y));
    try {
      s.stoi.push_back(stoi(x, y, sources[i].sample_rate));
    } catch (const ShapeError& e) {
      s.stoi.push_back(NAN);
      if (diagnostics) diagnostics->push_back(sources[i].clip_id + ": " + e.what());
    }
    if (pesq) {
      std::string diag;
      if (auto v = pesq_score(x, y, sources[i].sample_rate, pesq, &diag))
        pesq_vals.push_back(*v);
      else if (diagnostics)
        diagnostics->push_back(sources[i].clip_id + ": pesq absent: " + diag);
    }
  }
  std::vector<double> finite_stoi;
  for (double v : s.stoi)
    if (std::isfinite(v)) finite_stoi.push_back(v);
  s.stoi_mean = mean_of(finite_stoi);
  s.snr_mean = mean_of(s.snr);
  s.pesq_mean = mean_of(pesq_vals);
  return s;
}

EvalReport evaluate(const victims::VictimModel& model, const EvalInputs& in) {
  EvalReport r;
  r.target_label = in.target_label;
  const auto clean_pred = victims::predict_batch(model, in.clean);
  const auto trig_pred = victims::predict_batch(model, in.triggered);
  std::vector<std::string> p, t;
  for (size_t i = 0; i < in.clean.size(); ++i) {
    r.clips.push_back({in.clean[i].clip_id, in.clean[i].label, clean_pred[i].label, false, {}, {}});
    p.push_back(clean_pred[i].label);
    t.push_back(in.clean[i].label);
  }
  r.ba = benign_accuracy(p, t);
  p.clear();
  t.clear();
  for (size_t i = 0; i < in.triggered.size(); ++i) {
    r.clips.push_back({in.triggered[i].clip_id, in.triggered[i].label, trig_pred[i].label, true, {}, {}});
    p.push_back(trig_pred[i].label);
    t.push_back(in.triggered[i].label);
  }
  r.asr = attack_success_rate(p, t, in.target_label);
  if (in.perceptual && !in.trigger_sources.empty()) {
    const auto s = perceptual_summary(in.trigger_sources, in.triggered, in.pesq, &r.diagnostics);
    const size_t offset = in.clean.size();
    for (size_t i = 0; i < s.stoi.size(); ++i) {
      if (std::isfinite(s.stoi[i])) r.clips[offset + i].stoi = s.stoi[i];
      r.clips[offset + i].snr = s.snr[i];
    }
    r.stoi_mean = s.stoi_mean;
    r.snr_mean = s.snr_mean;
    r.pesq_mean = s.pesq_mean;
  }
  r.condition["model"] = model.fingerprint().substr(0, 16);
  return r;
}

}  // namespace wmtrig::scorecard
