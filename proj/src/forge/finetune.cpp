#include "wmtrig/forge/finetune.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "wmtrig/common/adam.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/log.hpp"
#include "wmtrig/common/rng.hpp"

namespace wmtrig::forge {
namespace {

struct Example {
  std::vector<double> clean;
  std::vector<double> target;
};

std::vector<double> crop(const audio::AudioClip& clip, int segment) {
  const auto x = audio::to_double(clip.samples);
  if (segment <= 0 || static_cast<int>(x.size()) <= segment) return x;
  const size_t start = (x.size() - segment) / 2;
  return {x.begin() + start, x.begin() + start + segment};
}

std::string describe(int step, const LossBundle& b) {
  std::ostringstream s;
  s << "non-finite loss at step " << step << " (sup=" << b.sup << " stft=" << b.stft
    << " mel=" << b.mel << " amp=" << b.amp << " total=" << b.total << ")";
  return s.str();
}

}  // namespace

void FinetuneConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("finetune: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  if (steps < 0 || epochs < 0) throw ConfigError("finetune: steps and epochs must be >= 0");
  if (segment_length < 0) throw ConfigError("finetune: segment_length must be >= 0");
  loss.validate();
}

FinetuneOutcome finetune_generator(const TriggerGenerator& gen,
                                   std::span<const audio::AudioClip> corpus,
                                   const FinetuneConfig& cfg) {
  cfg.validate();
  if (!gen.has_adapters()) throw ConfigError("finetune: generator has no adapters attached");
  if (gen.alpha_absorbed()) throw ConfigError("finetune: generator has already been fine-tuned");
  if (corpus.empty()) throw ConfigError("finetune: corpus is empty");

  FinetuneOutcome out{gen, {}};
  TriggerGenerator& g = out.generator;
  const std::string checksum = g.base_checksum();

  std::vector<Example> examples;
  examples.reserve(corpus.size());
  for (const auto& clip : corpus) {
    clip.validate();
    if (clip.sample_rate != audio::kCanonicalRate)
      throw ConfigError("finetune: clip " + clip.clip_id + " is not at the canonical rate");
    Example e;
    e.clean = crop(clip, cfg.segment_length);
    e.target = g.base_residual(e.clean);
    for (auto& v : e.target) v *= g.alpha();
    examples.push_back(std::move(e));
  }

  const int n = static_cast<int>(examples.size());
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = cfg.steps > 0 ? cfg.steps : cfg.epochs * batches_per_epoch;
  if (total_steps == 0) return out;

  std::ofstream log;
  if (!cfg.metrics_log.empty()) {
    if (cfg.metrics_log.has_parent_path()) std::filesystem::create_directories(cfg.metrics_log.parent_path());
    log.open(cfg.metrics_log, std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log " + cfg.metrics_log.string());
  }

  std::vector<double> params = g.adapter_parameters();
  std::vector<double> grad(params.size());
  Adam<double> opt(params.size(), cfg.learning_rate);
  Rng rng(cfg.seed);
  std::vector<int> order(n);
  int cursor = n;  // forces a shuffle before the first batch

  for (int step = 0; step < total_steps; ++step) {
    if (cursor >= n) {
      std::iota(order.begin(), order.end(), 0);
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
      cursor = 0;
    }
    const int take = std::min(cfg.batch_size, n - cursor);
    std::vector<TriggerGenerator::Encoded> enc(take);
    std::vector<TriggerGenerator::DecoderTrace> traces(take);
    Batch residuals(take);
    std::vector<JointSample> batch(take);
    for (int b = 0; b < take; ++b) {
      const Example& e = examples[order[cursor + b]];
      enc[b] = g.encode(e.clean);
      residuals[b] = g.decode(enc[b], &traces[b], true);
      batch[b] = JointSample{e.clean, residuals[b], e.target};
    }
    cursor += take;

    Batch d_res;
    const LossBundle loss = joint_loss(batch, cfg.loss, &d_res);
    if (!std::isfinite(loss.total)) throw DivergenceError(describe(step, loss));

    std::fill(grad.begin(), grad.end(), 0.0);
    for (int b = 0; b < take; ++b) g.decoder_backward(enc[b], traces[b], d_res[b], grad);
    opt.step(params, grad);
    g.set_adapter_parameters(params);

    out.history.push_back({step, loss});
    if (log) {
      const nlohmann::json rec = {{"step", step},     {"sup", loss.sup}, {"stft", loss.stft},
                                  {"mel", loss.mel},   {"amp", loss.amp}, {"total", loss.total}};
      log << rec.dump() << '\n';
    }
    if (step % 50 == 0 || step + 1 == total_steps)
      WMTRIG_DEBUG << "finetune step " << step << " total=" << loss.total << " sup=" << loss.sup;
  }
  if (g.base_checksum() != checksum) throw Error("finetune: base parameters changed");
  g.mark_alpha_absorbed();
  return out;
}

}  // namespace wmtrig::forge
