#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "wmtrig/audio/wav.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/victims/features.hpp"
#include "wmtrig/victims/models.hpp"
#include "wmtrig/victims/nn.hpp"
#include "wmtrig/victims/train.hpp"

using namespace wmtrig;
using namespace wmtrig::victims;
namespace fs = std::filesystem;

namespace {

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

// Compares train_batch gradients with central differences of the batch loss
// on the parameters with the largest analytic gradients.
void gradient_check(Network& net, const std::vector<FeatureMatrix>& feats, const std::vector<int>& labels) {
  const auto batch = ptrs(feats);
  auto grad = net.zeros_like();
  net.train_batch(batch, labels, *grad, nullptr);
  auto loss_of = [&] {
    return nn::softmax_cross_entropy(net.forward(batch), labels, nullptr);
  };
  auto gp = grad->params();
  auto pp = net.params();
  int checked = 0, bad = 0;
  for (size_t b = 0; b < pp.size(); ++b) {
    // Largest-gradient entry of each block keeps float round-off negligible.
    size_t best = 0;
    for (size_t i = 1; i < pp[b].size; ++i)
      if (std::abs(gp[b].data[i]) > std::abs(gp[b].data[best])) best = i;
    if (std::abs(gp[b].data[best]) < 1e-4) continue;
    float* p = pp[b].data + best;
    const float keep = *p;
    const float h = 1e-3f * std::max(1.0f, std::abs(keep));
    *p = keep + h;
    const double fp = loss_of();
    *p = keep - h;
    const double fm = loss_of();
    *p = keep;
    const double fd = (fp - fm) / (2.0 * h);
    ++checked;
    if (test_support::rel_err(gp[b].data[best], fd) > 3e-2) {
      ++bad;
      MESSAGE(pp[b].name << "[" << best << "] analytic " << gp[b].data[best] << " numeric " << fd);
    }
  }
  CHECK(checked >= 4);
  CHECK(bad == 0);
}

VictimConfig small_cfg(Architecture a) {
  VictimConfig cfg;
  cfg.architecture = a;
  cfg.classes = {"a", "b", "c"};
  cfg.widths = a == Architecture::kPlainConv ? std::vector<int>{4, 5} : std::vector<int>{4, 6};
  cfg.lstm_hidden = 6;
  cfg.features.n_mels = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("features: frame count, silence and determinism") {
  const FeatureConfig cfg;
  audio::AudioClip c;
  c.samples = audio::to_float(test_support::speechlike(16000, 1));
  const auto f = extract_features(c, cfg);
  CHECK(f.frames == 1 + 16000 / 160);
  CHECK(f.frames == 101);
  CHECK(f.bands == 40);
  CHECK(f.values == extract_features(c, cfg).values);
  double mean = 0.0, sq = 0.0;
  for (float v : f.values) {
    mean += v;
    sq += v * v;
  }
  mean /= f.values.size();
  CHECK(std::abs(mean) < 1e-5);
  CHECK(sq / f.values.size() == doctest::Approx(1.0).epsilon(1e-4));

  // Shorter and longer clips are fixed to one second.
  audio::AudioClip short_clip = c, long_clip = c;
  short_clip.samples.resize(9000);
  long_clip.samples.resize(20000, 0.1f);
  CHECK(extract_features(short_clip, cfg).frames == 101);
  CHECK(extract_features(long_clip, cfg).frames == 101);

  audio::AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  for (float v : extract_features(silent, cfg).values) CHECK(v == 0.0f);

  audio::AudioClip empty;
  CHECK_THROWS_AS(extract_features(empty, cfg), ShapeError);
  audio::AudioClip wrong = c;
  wrong.sample_rate = 8000;
  CHECK_THROWS_AS(extract_features(wrong, cfg), ConfigError);

  FeatureConfig var = cfg;
  var.fixed_samples = 0;
  short_clip.samples.resize(8000);
  CHECK(extract_features(short_clip, var).frames == 51);
}

TEST_CASE("features: dynamic-range clamp below the utterance peak") {
  // A 6 kHz tone 94 dB under a 1 kHz tone vanishes under a 60 dB clamp, the
  // same way a low-pass that empties the top bands should.
  std::vector<double> loud(16000), both(16000);
  for (int i = 0; i < 16000; ++i) {
    loud[i] = 0.5 * std::sin(2 * std::numbers::pi * 1000.0 * i / 16000.0);
    both[i] = loud[i] + 1e-5 * std::sin(2 * std::numbers::pi * 6000.0 * i / 16000.0);
  }
  audio::AudioClip a, b;
  a.samples = audio::to_float(loud);
  b.samples = audio::to_float(both);
  FeatureConfig cfg;
  CHECK(cfg.top_db == 60.0);
  // Edge frames see the padding transient, which is broadband and above the
  // clamp, so only interior frames are compared.
  auto max_diff = [](const FeatureMatrix& p, const FeatureMatrix& q) {
    double d = 0;
    for (int t = 2; t < p.frames - 2; ++t)
      for (int m = 0; m < p.bands; ++m) d = std::max(d, double(std::abs(p.at(t, m) - q.at(t, m))));
    return d;
  };
  CHECK(max_diff(extract_features(a, cfg), extract_features(b, cfg)) < 1e-5);
  FeatureConfig open = cfg;
  open.top_db = 0;
  CHECK(max_diff(extract_features(a, open), extract_features(b, open)) > 0.1);

  // Oracle: clamp and normalise the audio-core dB mel directly.
  audio::AudioClip c;
  c.samples = audio::to_float(test_support::speechlike(16000, 3));
  c.samples.resize(12000);
  const auto f = extract_features(c, cfg);
  std::vector<double> x = audio::to_double(c.samples);
  x.resize(16000, 0.0);
  auto db = audio::to_db(audio::mel_spectrogram(x, cfg.mel_config()).values);
  const double peak = *std::max_element(db.begin(), db.end());
  double mean = 0, var = 0;
  for (double& v : db) mean += (v = std::max(v, peak - 60.0));
  mean /= db.size();
  for (double v : db) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / db.size());
  double worst = 0;
  for (size_t i = 0; i < db.size(); ++i) worst = std::max(worst, std::abs(f.values[i] - (db[i] - mean) / sd));
  CHECK(worst < 1e-5);
  // The zero-padded tail sits exactly on the clamp.
  const float tail = f.at(f.frames - 1, 0);
  CHECK(tail == doctest::Approx((peak - 60.0 - mean) / sd).epsilon(1e-5));

  FeatureConfig rt = FeatureConfig::from_json(cfg.to_json());
  CHECK(rt == cfg);
}

TEST_CASE("softmax and cross-entropy") {
  nn::Vec z(4);
  z << 1.0f, -2.0f, 0.5f, 3.0f;
  const nn::Vec p = nn::softmax(z);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
  nn::Vec shifted = z.array() + 7.5f;
  Eigen::Index a, b;
  p.maxCoeff(&a);
  nn::softmax(shifted).maxCoeff(&b);
  CHECK(a == b);
  nn::Mat logits(3, 1);
  logits << 0.0f, 0.0f, 0.0f;
  CHECK(nn::softmax_cross_entropy(logits, {1}, nullptr) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("residual conv net gradients match finite differences") {
  auto cfg = small_cfg(Architecture::kResidualConv);
  auto model = init_victim(cfg);
  Rng rng(2);
  std::vector<FeatureMatrix> feats{random_features(12, 8, rng), random_features(12, 8, rng), random_features(12, 8, rng)};
  gradient_check(model.net(), feats, {0, 2, 1});
}

TEST_CASE("plain conv net gradients match finite differences") {
  auto model = init_victim(small_cfg(Architecture::kPlainConv));
  Rng rng(3);
  std::vector<FeatureMatrix> feats{random_features(7, 8, rng), random_features(7, 8, rng)};
  gradient_check(model.net(), feats, {1, 0});
}

TEST_CASE("recurrent net gradients match finite differences, including mixed lengths") {
  auto model = init_victim(small_cfg(Architecture::kRecurrent));
  Rng rng(4);
  std::vector<FeatureMatrix> feats{random_features(6, 8, rng), random_features(4, 8, rng), random_features(6, 8, rng)};
  gradient_check(model.net(), feats, {2, 0, 1});
  const auto logits = model.net().forward(ptrs(feats));
  CHECK(logits.cols() == 3);
  // Mixed-length batches agree with one-at-a-time evaluation.
  for (size_t i = 0; i < feats.size(); ++i) {
    const FeatureMatrix* one = &feats[i];
    const auto single = model.net().forward(std::span(&one, 1));
    CHECK((single.col(0) - logits.col(i)).cwiseAbs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("training reaches high accuracy on a separable two-class set") {
  for (Architecture arch : {Architecture::kResidualConv, Architecture::kRecurrent}) {
    VictimConfig cfg = small_cfg(arch);
    cfg.classes = {"lo", "hi"};
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3;
    cfg.widths = {8, 16};
    Rng rng(8);
    std::vector<FeatureMatrix> feats;
    std::vector<int> labels;
    for (int i = 0; i < 256; ++i) {
      auto f = random_features(12, 8, rng);
      const int y = i % 2;
      for (int t = 0; t < f.frames; ++t)
        for (int m = 0; m < 4; ++m) f.values[t * 8 + m + 4 * y] += 3.0f;
      feats.push_back(std::move(f));
      labels.push_back(y);
    }
    const auto out = train_on_features(init_victim(cfg), feats, labels, cfg);
    REQUIRE(out.history.size() == 5);
    for (const auto& rec : out.history) CHECK(std::isfinite(rec.loss));
    const auto preds = predict_features(out.model, feats);
    int correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) correct += preds[i].index == labels[i];
    MESSAGE(to_string(arch) << " accuracy " << 100.0 * correct / preds.size());
    CHECK(100.0 * correct / preds.size() >= 99.0);
  }
}

TEST_CASE("zero epochs, determinism and prediction contracts") {
  auto cfg = small_cfg(Architecture::kResidualConv);
  cfg.epochs = 0;
  Rng rng(9);
  std::vector<FeatureMatrix> feats;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    feats.push_back(random_features(12, 8, rng));
    labels.push_back(i % 3);
  }
  const auto init = init_victim(cfg);
  CHECK(train_on_features(init, feats, labels, cfg).model.fingerprint() == init.fingerprint());

  cfg.epochs = 2;
  const auto a = train_on_features(init, feats, labels, cfg);
  const auto b = train_on_features(init, feats, labels, cfg);
  CHECK(a.model.fingerprint() == b.model.fingerprint());
  CHECK(a.model.fingerprint() != init.fingerprint());

  const auto p1 = predict_features(a.model, feats);
  const auto p2 = predict_features(a.model, feats);
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].scores == p2[i].scores);
    double s = 0.0;
    for (float v : p1[i].scores) {
      CHECK(std::isfinite(v));
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p1[i].label == a.model.classes()[p1[i].index]);
  }
}

TEST_CASE("checkpoint round trip for every architecture") {
  test_support::TempDir dir;
  Rng rng(10);
  std::vector<FeatureMatrix> feats{random_features(12, 8, rng), random_features(12, 8, rng)};
  for (Architecture arch : {Architecture::kResidualConv, Architecture::kPlainConv, Architecture::kRecurrent}) {
    auto model = init_victim(small_cfg(arch));
    model.provenance["seed"] = 5;
    const auto path = dir.path() / (to_string(arch) + ".wmta");
    model.save(path);
    const auto back = VictimModel::load(path);
    CHECK(back.fingerprint() == model.fingerprint());
    CHECK(back.classes() == model.classes());
    CHECK(back.features() == model.features());
    CHECK(back.provenance == model.provenance);
    CHECK(back.net().forward(ptrs(feats)) == model.net().forward(ptrs(feats)));
  }
}

TEST_CASE("structure checks name the offending layer") {
  auto model = init_victim(small_cfg(Architecture::kResidualConv));
  auto& net = dynamic_cast<ConvNet&>(model.net());
  net.blocks[1].conv1.cin += 1;
  try {
    net.check_structure();
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("blocks.1.conv1") != std::string::npos);
  }
}

TEST_CASE("train_victim rejects labels outside the class list before training") {
  test_support::TempDir dir;
  audio::AudioClip c;
  c.samples = audio::to_float(test_support::speechlike(4000, 3));
  audio::save_wav(dir.path() / "a.wav", c);
  const auto manifest = poison::CorpusManifest::from_clips({{(dir.path() / "a.wav").string(), "zebra"}});
  auto cfg = small_cfg(Architecture::kResidualConv);
  CHECK_THROWS_AS(train_victim(manifest, cfg), ConfigError);

  cfg.classes = {"a", "a"};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.classes = {"a"};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("train_victim end to end on a tiny file corpus") {
  test_support::TempDir dir;
  std::vector<std::pair<std::string, std::string>> refs;
  for (int i = 0; i < 12; ++i) {
    audio::AudioClip c;
    const bool hi = i % 2;
    c.samples = audio::to_float(test_support::sine(16000, hi ? 3000.0 : 300.0, 16000, 0.3));
    const auto p = dir.path() / ("c" + std::to_string(i) + ".wav");
    audio::save_wav(p, c);
    refs.emplace_back(p.string(), hi ? "hi" : "lo");
  }
  const auto manifest = poison::CorpusManifest::from_clips(refs);
  VictimConfig cfg;
  cfg.classes = {"lo", "hi"};
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.widths = {4, 8};
  const auto out = train_victim(manifest, cfg, dir.path() / "hist.jsonl");
  CHECK(out.model.provenance.at("manifest_hash") == manifest.digest());
  CHECK(out.model.provenance.contains("config_hash"));
  CHECK(fs::file_size(dir.path() / "hist.jsonl") > 0);
}
