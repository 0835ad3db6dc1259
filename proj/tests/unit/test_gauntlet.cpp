#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "test_support.hpp"
#include "wmtrig/common/csv.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/rng.hpp"
#include "wmtrig/gauntlet/butterworth.hpp"
#include "wmtrig/gauntlet/prune.hpp"
#include "wmtrig/gauntlet/sweep.hpp"
#include "wmtrig/victims/train.hpp"

using namespace wmtrig;
using namespace wmtrig::gauntlet;
using victims::ConvNet;
using victims::FeatureMatrix;

namespace {

constexpr double kRate = 16000.0;

// Digital Butterworth magnitude after the bilinear transform with
// pre-warping, from the closed form rather than the filter coefficients.
double warped_db(double f, double fc, int order) {
  const double r = std::tan(std::numbers::pi * f / kRate) / std::tan(std::numbers::pi * fc / kRate);
  return -10.0 * std::log10(1.0 + std::pow(r, 2.0 * order));
}

double rms_tail(const std::vector<double>& x, size_t from, size_t to) {
  double s = 0.0;
  for (size_t i = from; i < to; ++i) s += x[i] * x[i];
  return std::sqrt(s / static_cast<double>(to - from));
}

// Steady-state gain of a tone, measured away from both ends.
double tone_gain_db(const SosFilter& f, double freq, bool zero_phase) {
  const auto x = test_support::sine(16000, freq, kRate);
  const auto y = zero_phase ? f.filtfilt(x) : f.filter(x);
  return 20.0 * std::log10(rms_tail(y, 4000, 12000) / rms_tail(x, 4000, 12000));
}

FeatureMatrix random_features(int frames, int bands, Rng& rng) {
  FeatureMatrix f{frames, bands, std::vector<float>(static_cast<size_t>(frames) * bands)};
  for (auto& v : f.values) v = static_cast<float>(rng.normal());
  return f;
}

std::vector<const FeatureMatrix*> ptrs(const std::vector<FeatureMatrix>& v) {
  std::vector<const FeatureMatrix*> out;
  for (const auto& f : v) out.push_back(&f);
  return out;
}

victims::VictimModel small_model(victims::Architecture a, std::vector<int> widths) {
  victims::VictimConfig cfg;
  cfg.architecture = a;
  cfg.classes = {"a", "b", "c"};
  cfg.widths = std::move(widths);
  cfg.lstm_hidden = 6;
  cfg.features.n_mels = 8;
  cfg.seed = 3;
  return victims::init_victim(cfg);
}

std::vector<FeatureMatrix> batch_of(int n, unsigned seed) {
  Rng rng(seed);
  std::vector<FeatureMatrix> out;
  for (int i = 0; i < n; ++i) out.push_back(random_features(12, 8, rng));
  return out;
}

}  // namespace

TEST_CASE("butterworth response matches the pre-warped closed form") {
  for (int order : {1, 2, 5, 6}) {
    const auto f = design_butterworth(order, 3800, kRate);
    CHECK(f.sections.size() == static_cast<size_t>((order + 1) / 2));
    CHECK(20 * std::log10(f.magnitude(3800, kRate)) == doctest::Approx(-3.0103).epsilon(1e-4));
    CHECK(f.magnitude(0, kRate) == doctest::Approx(1.0).epsilon(1e-12));
    for (double hz : {50.0, 1000.0, 3000.0, 4500.0, 6000.0, 7000.0, 7900.0})
      CHECK(20 * std::log10(f.magnitude(hz, kRate)) == doctest::Approx(warped_db(hz, 3800, order)).epsilon(1e-8));
  }
}

TEST_CASE("measured tone gains: passband, cutoff, stopband, zero-phase doubling") {
  const auto f = design_butterworth(6, 3800, kRate);
  CHECK(std::abs(tone_gain_db(f, 100, false)) < 0.1);
  CHECK(std::abs(tone_gain_db(f, 100, true)) < 0.1);
  CHECK(tone_gain_db(f, 3800, false) == doctest::Approx(-3.0103).epsilon(0.1 / 3.0103));
  CHECK(tone_gain_db(f, 3800, true) == doctest::Approx(-6.0206).epsilon(0.1 / 6.0206));
  const double expect = warped_db(7000, 3800, 6);
  CHECK(std::abs(tone_gain_db(f, 7000, false) - expect) < 0.5);
  CHECK(std::abs(tone_gain_db(f, 7000, true) - 2 * expect) < 1.0);
}

TEST_CASE("filtering agrees with scipy sosfilt and sosfiltfilt") {
  // Reference values from scipy.signal 1.x: butter(6, 3800, fs=16000,
  // output='sos') applied to the signal below.
  std::vector<double> x(400);
  for (size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(i);
    x[i] = std::sin(2 * std::numbers::pi * 300 * n / kRate) +
           0.5 * std::sin(2 * std::numbers::pi * 5000 * n / kRate + 0.2) + 0.001 * n;
  }
  const auto f = design_butterworth(6, 3800, kRate);
  const auto y = f.filtfilt(x);
  CHECK(y.size() == x.size());
  CHECK(y[0] == doctest::Approx(0.09948823640222965).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(0.10981357043843877).epsilon(1e-9));
  CHECK(y[57] == doctest::Approx(0.47438506941866987).epsilon(1e-9));
  CHECK(y[200] == doctest::Approx(-0.8003053097203857).epsilon(1e-9));
  CHECK(y[399] == doctest::Approx(0.026034615922839205).epsilon(1e-9));
  const auto z = f.filter(x);
  CHECK(z[0] == doctest::Approx(0.0023080866577476203).epsilon(1e-9));
  CHECK(z[57] == doctest::Approx(0.21149391831492453).epsilon(1e-9));
  CHECK(z[399] == doctest::Approx(0.7342071365452267).epsilon(1e-9));
  // Shorter than the default pad: scipy with padlen = n - 1.
  const auto s = f.filtfilt(std::span<const double>(x.data(), 10));
  CHECK(s[4] == doctest::Approx(0.47124450392369255).epsilon(1e-9));
}

TEST_CASE("filter properties: linearity, monotone response, length, errors") {
  const auto f = design_butterworth(6, 3800, kRate);
  const auto x = test_support::speechlike(8000, 1);
  const auto y = test_support::white_noise(8000, 0.1, 2);
  const double a = 0.7, b = -1.3;
  std::vector<double> mix(x.size());
  for (size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
  for (bool zp : {false, true}) {
    const auto fm = zp ? f.filtfilt(mix) : f.filter(mix);
    const auto fx = zp ? f.filtfilt(x) : f.filter(x);
    const auto fy = zp ? f.filtfilt(y) : f.filter(y);
    double num = 0, den = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double lin = a * fx[i] + b * fy[i];
      num += (fm[i] - lin) * (fm[i] - lin);
      den += lin * lin;
    }
    CHECK(std::sqrt(num / den) < 1e-6);
  }
  double prev = 2.0;
  for (double hz = 10; hz < 8000; hz *= 1.05) {
    const double m = f.magnitude(hz, kRate);
    CHECK(m <= prev * (1 + 1e-12));  // round-off in the flat passband
    prev = m;
  }
  audio::AudioClip clip;
  clip.samples = audio::to_float(x);
  CHECK(lowpass_filter(clip, {}).samples.size() == clip.samples.size());
  CHECK(lowpass_filter(clip, {6, 3800, false}).samples.size() == clip.samples.size());
  CHECK_THROWS_AS(lowpass_filter(clip, {6, 8000, true}), ConfigError);
  CHECK_THROWS_AS(lowpass_filter(clip, {0, 3800, true}), ConfigError);
  CHECK_THROWS_AS(design_butterworth(6, -1, kRate), ConfigError);
  CHECK(FilterSpec::from_json(FilterSpec{4, 2000, false}.to_json()).cutoff_hz == 2000);
}

TEST_CASE("prune rate 0 is bitwise identical; rate 1 keeps one channel per group") {
  const auto feats = batch_of(4, 7);
  for (auto arch : {victims::Architecture::kResidualConv, victims::Architecture::kPlainConv}) {
    const auto model = small_model(arch, {4, 6});
    PruneLog log;
    const auto same = prune_model(model, {0.0}, &log);
    const victims::nn::Mat a = model.net().forward(ptrs(feats));
    const victims::nn::Mat b = same.net().forward(ptrs(feats));
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
    CHECK(log.parameters_after == log.parameters_before);

    const auto one = prune_model(model, {1.0}, &log);
    const auto& net = dynamic_cast<const ConvNet&>(one.net());
    CHECK(net.stem.cout == 1);
    for (const auto& blk : net.blocks) {
      CHECK(blk.conv1.cout == 1);
      if (blk.residual()) CHECK(blk.conv2->cout == 1);
    }
    CHECK(net.head.w.cols() == 1);
    CHECK(one.net().forward(ptrs(feats)).cols() == 4);
    for (const auto& g : log.groups) CHECK(g.removed.size() == static_cast<size_t>(g.channels_before - 1));
  }
}

TEST_CASE("zero-channel toy: the zero channel goes first and outputs are unchanged") {
  auto model = small_model(victims::Architecture::kPlainConv, {4, 3});
  auto& net = dynamic_cast<ConvNet&>(model.net());
  net.stem.w.row(2).setZero();
  net.stem.b[2] = 0.0f;
  PruneLog log;
  // floor(0.25 * 4) = 1 stem channel, floor(0.25 * 3) = 0 block channels.
  const auto pruned = prune_model(model, {0.25}, &log);
  REQUIRE(log.groups.size() == 2);
  CHECK(log.groups[0].removed == std::vector<int>{2});
  CHECK(log.groups[1].removed.empty());
  const auto& pnet = dynamic_cast<const ConvNet&>(pruned.net());
  CHECK(pnet.stem.cout == 3);
  CHECK(pnet.blocks[0].conv1.cin == 3);
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto feats = batch_of(5, seed);
    const victims::nn::Mat a = model.net().forward(ptrs(feats));
    const victims::nn::Mat b = pruned.net().forward(ptrs(feats));
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6f * std::max(1.0f, a.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("ranking: ties go to the lower index; residual outputs use the joint norm") {
  auto model = small_model(victims::Architecture::kResidualConv, {4, 4});
  auto& net = dynamic_cast<ConvNet&>(model.net());
  net.stem.w.row(1) = net.stem.w.row(3) * 0.01f;
  net.stem.w.row(3) = net.stem.w.row(1);
  PruneLog log;
  prune_model(model, {0.25}, &log);
  CHECK(log.groups[0].name == "stem");
  CHECK(log.groups[0].removed == std::vector<int>{1});

  const auto& b0 = net.blocks[0];
  const victims::nn::Vec joint =
      (b0.conv2->filter_norms().array().square() + b0.proj->filter_norms().array().square()).sqrt();
  int argmin = 0;
  for (int i = 1; i < joint.size(); ++i)
    if (joint[i] < joint[argmin]) argmin = i;
  CHECK(log.groups[2].name == "blocks.0.out");
  CHECK(log.groups[2].removed == std::vector<int>{argmin});
}

TEST_CASE("parameter count strictly decreases with rate; pruning is deterministic") {
  const auto model = small_model(victims::Architecture::kResidualConv, {16, 32});
  size_t prev = model.net().parameter_count();
  for (double rate : {0.1, 0.3, 0.5, 1.0}) {
    const auto p = prune_model(model, {rate});
    CHECK(p.net().parameter_count() < prev);
    prev = p.net().parameter_count();
    CHECK(prune_model(model, {rate}).fingerprint() == p.fingerprint());
  }
  CHECK(channels_to_remove(10, 0.3) == 3);
  CHECK(channels_to_remove(10, 0.29) == 2);
  CHECK(channels_to_remove(1, 1.0) == 0);
  CHECK_THROWS_AS(prune_model(model, {1.5}), ConfigError);
}

TEST_CASE("recurrent victims are left unchanged; broken structure names the layer") {
  const auto lstm = small_model(victims::Architecture::kRecurrent, {4});
  PruneLog log;
  const auto same = prune_model(lstm, {0.5}, &log);
  CHECK(log.skipped);
  CHECK(same.fingerprint() == lstm.fingerprint());

  auto model = small_model(victims::Architecture::kResidualConv, {4, 6});
  auto& net = dynamic_cast<ConvNet&>(model.net());
  net.blocks[1].conv1.cin = 5;
  try {
    prune_model(model, {0.5});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("blocks.1.conv1") != std::string::npos);
  }
}

TEST_CASE("pruning sweep: rate 0 reproduces the unpruned evaluation") {
  const auto model = small_model(victims::Architecture::kResidualConv, {4, 6});
  std::vector<audio::AudioClip> clean, trig;
  for (int i = 0; i < 6; ++i) {
    audio::AudioClip c;
    c.samples = audio::to_float(test_support::speechlike(16000, 50 + i));
    c.label = i % 2 ? "b" : "c";
    c.clip_id = "x" + std::to_string(i);
    clean.push_back(c);
    trig.push_back(c);
  }
  scorecard::EvalInputs in{clean, trig, {}, "a", false, nullptr};
  const auto base = scorecard::evaluate(model, in);
  const std::vector<double> rates{0.0, 0.5, 1.0};
  const auto rows = sweep_pruning(model, rates, in);
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].report.has_value());
  CHECK(rows[0].report->ba == base.ba);
  CHECK(rows[0].report->asr == base.asr);
  CHECK(rows[2].parameters < rows[1].parameters);
  const std::vector<double> bad{0.5, 0.1};
  CHECK_THROWS_AS(sweep_pruning(model, bad, in), ConfigError);

  const std::vector<double> cutoffs{3800.0, 9000.0};
  const auto lp = sweep_lowpass(model, cutoffs, 6, true, in);
  CHECK(lp[0].report.has_value());
  CHECK_FALSE(lp[1].report.has_value());
  CHECK(lp[1].error.find("cutoff") != std::string::npos);

  test_support::TempDir dir("sweep");
  write_sweep_csv(dir.path() / "prune.csv", rows, "rate");
  const auto t = csv::read(dir.path() / "prune.csv");
  CHECK(t.header[0] == "rate");
  CHECK(t.rows.size() == 3);
}
