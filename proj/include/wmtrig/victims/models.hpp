#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/common/tensor_archive.hpp"
#include "wmtrig/victims/features.hpp"
#include "wmtrig/victims/nn.hpp"

namespace wmtrig::victims {

enum class Architecture { kResidualConv, kRecurrent, kPlainConv };
std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& name);

struct ParamBlock {
  std::string name;
  float* data = nullptr;
  size_t size = 0;
};

using FeatureBatch = std::span<const FeatureMatrix* const>;

class Network {
 public:
  virtual ~Network() = default;
  virtual std::unique_ptr<Network> clone() const = 0;
  // Same structure with every parameter zero; used as a gradient buffer.
  virtual std::unique_ptr<Network> zeros_like() const = 0;
  virtual Architecture architecture() const = 0;
  virtual int num_classes() const = 0;

  // Logits, num_classes x batch.
  virtual nn::Mat forward(FeatureBatch batch) const = 0;
  // Mean cross-entropy on the batch; adds parameter gradients into grad
  // (a zeros_like() buffer) and optionally returns the logits.
  virtual float train_batch(FeatureBatch batch, const std::vector<int>& labels, Network& grad,
                            nn::Mat* logits) const = 0;

  // Stable order; names double as archive keys.
  virtual std::vector<ParamBlock> params() = 0;
  std::vector<ParamBlock> params() const { return const_cast<Network*>(this)->params(); }
  size_t parameter_count() const;

  // Structural descriptor sufficient to rebuild the network from an archive.
  virtual nlohmann::json describe() const = 0;
};

// Stem convolution, a chain of blocks, global average pooling and a linear
// head. Residual blocks are conv3x3-ReLU-conv3x3 plus a 1x1 projection
// shortcut, followed by ReLU; plain blocks are a single conv3x3-ReLU.
class ConvNet : public Network {
 public:
  struct Block {
    nn::Conv2d conv1;
    std::optional<nn::Conv2d> conv2;  // present for residual blocks
    std::optional<nn::Conv2d> proj;   // present for residual blocks
    bool residual() const { return conv2.has_value(); }
  };

  static ConvNet residual(int classes, const std::vector<int>& widths, int blocks_per_stage, Rng& rng);
  static ConvNet plain(int classes, const std::vector<int>& widths, Rng& rng);
  static ConvNet from_descriptor(const nlohmann::json& d);

  std::unique_ptr<Network> clone() const override { return std::make_unique<ConvNet>(*this); }
  std::unique_ptr<Network> zeros_like() const override;
  Architecture architecture() const override { return arch_; }
  int num_classes() const override { return static_cast<int>(head.w.rows()); }
  nn::Mat forward(FeatureBatch batch) const override;
  float train_batch(FeatureBatch batch, const std::vector<int>& labels, Network& grad,
                    nn::Mat* logits) const override;
  std::vector<ParamBlock> params() override;
  using Network::params;
  nlohmann::json describe() const override;

  // Throws ShapeError naming the first layer whose input width disagrees
  // with its producer.
  void check_structure() const;

  nn::Conv2d stem;
  std::vector<Block> blocks;
  nn::Linear head;

 private:
  Architecture arch_ = Architecture::kResidualConv;
};

// Stacked LSTM over feature frames with a linear readout of the last
// frame's hidden state.
class RecurrentNet : public Network {
 public:
  static RecurrentNet create(int classes, int input_size, int hidden, int layers, Rng& rng);
  static RecurrentNet from_descriptor(const nlohmann::json& d);

  std::unique_ptr<Network> clone() const override { return std::make_unique<RecurrentNet>(*this); }
  std::unique_ptr<Network> zeros_like() const override;
  Architecture architecture() const override { return Architecture::kRecurrent; }
  int num_classes() const override { return static_cast<int>(head.w.rows()); }
  nn::Mat forward(FeatureBatch batch) const override;
  float train_batch(FeatureBatch batch, const std::vector<int>& labels, Network& grad,
                    nn::Mat* logits) const override;
  std::vector<ParamBlock> params() override;
  using Network::params;
  nlohmann::json describe() const override;

  std::vector<nn::LstmLayer> layers;
  nn::Linear head;
};

// A classifier together with its label space, front-end and provenance.
class VictimModel {
 public:
  VictimModel() = default;
  VictimModel(std::unique_ptr<Network> net, std::vector<std::string> classes, FeatureConfig features);
  VictimModel(const VictimModel& other);
  VictimModel& operator=(const VictimModel& other);
  VictimModel(VictimModel&&) noexcept = default;
  VictimModel& operator=(VictimModel&&) noexcept = default;

  Network& net() { return *net_; }
  const Network& net() const { return *net_; }
  const std::vector<std::string>& classes() const { return classes_; }
  const FeatureConfig& features() const { return features_; }
  int class_index(const std::string& label) const;  // -1 when absent

  nlohmann::json provenance = nlohmann::json::object();

  // SHA-256 over the descriptor and every parameter.
  std::string fingerprint() const;
  void save(const std::filesystem::path& path) const;
  static VictimModel load(const std::filesystem::path& path);

 private:
  std::unique_ptr<Network> net_;
  std::vector<std::string> classes_;
  FeatureConfig features_;
};

struct Prediction {
  std::string label;
  int index = -1;
  std::vector<float> scores;  // softmax probabilities
};

std::vector<Prediction> predict_features(const VictimModel& model, std::span<const FeatureMatrix> features);
std::vector<Prediction> predict_batch(const VictimModel& model, std::span<const audio::AudioClip> clips);
Prediction predict(const VictimModel& model, const audio::AudioClip& clip);

}  // namespace wmtrig::victims
