#include "wmtrig/victims/train.hpp"

#include <fstream>
#include <numeric>
#include <set>

#include "wmtrig/audio/wav.hpp"
#include "wmtrig/common/adam.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/hash.hpp"
#include "wmtrig/common/log.hpp"

namespace wmtrig::victims {
namespace {

std::vector<float> gather(const Network& net) {
  std::vector<float> flat;
  flat.reserve(net.parameter_count());
  for (const auto& p : net.params()) flat.insert(flat.end(), p.data, p.data + p.size);
  return flat;
}

void scatter(Network& net, const std::vector<float>& flat) {
  size_t offset = 0;
  for (auto& p : net.params()) {
    std::copy(flat.begin() + offset, flat.begin() + offset + p.size, p.data);
    offset += p.size;
  }
}

}  // namespace

void VictimConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("victim: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("victim: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("victim: epochs must be >= 0");
  if (classes.empty()) throw ConfigError("victim: class list is empty");
  if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size())
    throw ConfigError("victim: class list has duplicates");
  if (architecture != Architecture::kRecurrent) {
    if (widths.empty()) throw ConfigError("victim: widths must be non-empty");
    for (int w : widths)
      if (w < 1) throw ConfigError("victim: widths must be positive");
  }
  features.validate();
}

nlohmann::json VictimConfig::to_json() const {
  return {{"architecture", to_string(architecture)},
          {"features", features.to_json()},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"classes", classes},
          {"widths", widths},
          {"blocks_per_stage", blocks_per_stage},
          {"lstm_hidden", lstm_hidden},
          {"lstm_layers", lstm_layers}};
}

VictimConfig VictimConfig::from_json(const nlohmann::json& j) {
  VictimConfig c;
  if (j.contains("architecture")) c.architecture = parse_architecture(j.at("architecture").get<std::string>());
  if (j.contains("features")) c.features = FeatureConfig::from_json(j.at("features"));
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.classes = j.value("classes", c.classes);
  c.widths = j.value("widths", c.widths);
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  return c;
}

VictimModel init_victim(const VictimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int k = static_cast<int>(cfg.classes.size());
  std::unique_ptr<Network> net;
  switch (cfg.architecture) {
    case Architecture::kResidualConv:
      net = std::make_unique<ConvNet>(ConvNet::residual(k, cfg.widths, cfg.blocks_per_stage, rng));
      break;
    case Architecture::kPlainConv:
      net = std::make_unique<ConvNet>(ConvNet::plain(k, cfg.widths, rng));
      break;
    case Architecture::kRecurrent:
      net = std::make_unique<RecurrentNet>(RecurrentNet::create(k, cfg.features.n_mels, cfg.lstm_hidden, cfg.lstm_layers, rng));
      break;
  }
  return VictimModel(std::move(net), cfg.classes, cfg.features);
}

TrainedVictim train_on_features(const VictimModel& init, std::span<const FeatureMatrix> features,
                                std::span<const int> labels, const VictimConfig& cfg,
                                const std::filesystem::path& history_log) {
  cfg.validate();
  if (features.size() != labels.size()) throw ShapeError("train: feature/label count mismatch");
  if (features.empty()) throw ConfigError("train: empty training set");
  const int k = init.net().num_classes();
  for (int l : labels)
    if (l < 0 || l >= k) throw ConfigError("train: label index out of range");

  TrainedVictim out{init, {}};
  Network& net = out.model.net();
  std::vector<float> params = gather(net);
  Adam<float> opt(params.size(), cfg.learning_rate);
  auto grad_net = net.zeros_like();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::ofstream log;
  if (!history_log.empty()) {
    if (history_log.has_parent_path()) std::filesystem::create_directories(history_log.parent_path());
    log.open(history_log, std::ios::trunc);
    if (!log) throw IoError("cannot open " + history_log.string());
  }

  const size_t n = features.size();
  std::vector<size_t> order(n);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
    double loss_sum = 0.0;
    size_t correct = 0;
    for (size_t start = 0; start < n; start += cfg.batch_size) {
      const size_t end = std::min(n, start + cfg.batch_size);
      std::vector<const FeatureMatrix*> batch;
      std::vector<int> batch_labels;
      for (size_t i = start; i < end; ++i) {
        batch.push_back(&features[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }
      grad_net = net.zeros_like();
      nn::Mat logits;
      const float loss = net.train_batch(batch, batch_labels, *grad_net, &logits);
      if (!std::isfinite(loss))
        throw DivergenceError("victim training diverged at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step));
      const std::vector<float> grad = gather(*grad_net);
      opt.step(params, grad);
      scatter(net, params);
      loss_sum += static_cast<double>(loss) * batch.size();
      for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Eigen::Index best;
        logits.col(j).maxCoeff(&best);
        correct += best == batch_labels[j];
      }
      ++step;
    }
    EpochRecord rec{epoch, loss_sum / n, 100.0 * correct / n};
    out.history.push_back(rec);
    if (log)
      log << nlohmann::json{{"epoch", rec.epoch}, {"loss", rec.loss}, {"accuracy", rec.accuracy}}.dump() << '\n';
    WMTRIG_DEBUG << "victim epoch " << epoch << " loss " << rec.loss << " acc " << rec.accuracy;
  }
  out.model.provenance["seed"] = cfg.seed;
  out.model.provenance["config_hash"] = sha256_hex(cfg.to_json().dump());
  return out;
}

std::vector<FeatureMatrix> manifest_features(const poison::CorpusManifest& manifest, const FeatureConfig& cfg) {
  std::vector<FeatureMatrix> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest.entries) out.push_back(extract_features(audio::load_wav_canonical(e.clip_ref), cfg));
  return out;
}

TrainedVictim train_victim(const poison::CorpusManifest& manifest, const VictimConfig& cfg,
                           const std::filesystem::path& history_log) {
  cfg.validate();
  std::vector<int> labels;
  labels.reserve(manifest.size());
  for (const auto& e : manifest.entries) {
    const auto it = std::find(cfg.classes.begin(), cfg.classes.end(), e.label);
    if (it == cfg.classes.end())
      throw ConfigError("label '" + e.label + "' of " + e.clip_ref + " is not in the victim class list");
    labels.push_back(static_cast<int>(it - cfg.classes.begin()));
  }
  const auto feats = manifest_features(manifest, cfg.features);
  auto out = train_on_features(init_victim(cfg), feats, labels, cfg, history_log);
  out.model.provenance["manifest_hash"] = manifest.digest();
  return out;
}

}  // namespace wmtrig::victims
