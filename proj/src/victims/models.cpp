#include "wmtrig/victims/models.hpp"

#include <algorithm>
#include <map>

#include "wmtrig/common/error.hpp"
#include "wmtrig/common/hash.hpp"

namespace wmtrig::victims {
namespace {

using nn::Act;
using nn::Conv2d;
using nn::Mat;
using nn::Vec;

constexpr const char* kFormatName = "wmtrig-victim";
constexpr int kFormatVersion = 1;

nlohmann::json conv_desc(const Conv2d& c) {
  return {{"cin", c.cin}, {"cout", c.cout}, {"k", c.k}, {"stride", c.stride}, {"pad", c.pad}};
}

Conv2d conv_from_desc(const nlohmann::json& d) {
  Conv2d c;
  c.cin = d.at("cin").get<int>();
  c.cout = d.at("cout").get<int>();
  c.k = d.at("k").get<int>();
  c.stride = d.at("stride").get<int>();
  c.pad = d.at("pad").get<int>();
  c.w = Mat::Zero(c.cout, c.cin * c.k * c.k);
  c.b = Vec::Zero(c.cout);
  return c;
}

void zero(Conv2d& c) {
  c.w.setZero();
  c.b.setZero();
}

void add_conv(std::vector<ParamBlock>& out, const std::string& name, Conv2d& c) {
  out.push_back({name + ".w", c.w.data(), static_cast<size_t>(c.w.size())});
  out.push_back({name + ".b", c.b.data(), static_cast<size_t>(c.b.size())});
}

int uniform_frames(FeatureBatch batch) {
  if (batch.empty()) throw ShapeError("empty feature batch");
  const int frames = batch[0]->frames;
  for (const auto* f : batch)
    if (f->frames != frames || f->bands != batch[0]->bands)
      throw ShapeError("convolutional victims need equal feature shapes within a batch");
  return frames;
}

Act input_act(FeatureBatch batch) {
  const int frames = uniform_frames(batch);
  const int bands = batch[0]->bands;
  Act x{static_cast<int>(batch.size()), frames, bands, Mat(1, static_cast<Eigen::Index>(batch.size()) * frames * bands)};
  for (size_t n = 0; n < batch.size(); ++n)
    std::copy(batch[n]->values.begin(), batch[n]->values.end(), x.m.data() + n * frames * bands);
  return x;
}

struct BlockTrace {
  Act in;
  Mat cols1, cols2, colsp;
  Act a, out;
};

struct ConvTrace {
  Act input;
  Mat stem_cols;
  Act stem_out;
  std::vector<BlockTrace> blocks;
  Mat pooled;
};

Mat conv_forward(const ConvNet& net, FeatureBatch batch, ConvTrace* t) {
  Act x = input_act(batch);
  Mat cols;
  Act h = net.stem.forward(x, t ? &cols : nullptr);
  nn::relu_inplace(h.m);
  if (t) {
    t->input = std::move(x);
    t->stem_cols = std::move(cols);
    t->stem_out = h;
  }
  for (const auto& blk : net.blocks) {
    BlockTrace bt;
    Act a = blk.conv1.forward(h, t ? &bt.cols1 : nullptr);
    nn::relu_inplace(a.m);
    Act y;
    if (blk.residual()) {
      y = blk.conv2->forward(a, t ? &bt.cols2 : nullptr);
      y.m += blk.proj->forward(h, t ? &bt.colsp : nullptr).m;
      nn::relu_inplace(y.m);
    } else {
      y = a;
    }
    if (t) {
      bt.in = std::move(h);
      bt.a = std::move(a);
      bt.out = y;
      t->blocks.push_back(std::move(bt));
    }
    h = std::move(y);
  }
  Mat pooled = nn::global_avg_pool(h);
  Mat logits = net.head.w * pooled;
  logits.colwise() += net.head.b;
  if (t) t->pooled = std::move(pooled);
  return logits;
}

}  // namespace

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kResidualConv: return "residual_conv";
    case Architecture::kRecurrent: return "recurrent";
    case Architecture::kPlainConv: return "plain_conv";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "residual_conv") return Architecture::kResidualConv;
  if (name == "recurrent") return Architecture::kRecurrent;
  if (name == "plain_conv") return Architecture::kPlainConv;
  throw ConfigError("unknown victim architecture '" + name + "'");
}

size_t Network::parameter_count() const {
  size_t n = 0;
  for (const auto& p : params()) n += p.size;
  return n;
}

// ---------------------------------------------------------------- ConvNet

ConvNet ConvNet::residual(int classes, const std::vector<int>& widths, int blocks_per_stage, Rng& rng) {
  if (widths.empty() || blocks_per_stage < 1) throw ConfigError("residual net needs >= 1 stage and block");
  ConvNet net;
  net.arch_ = Architecture::kResidualConv;
  net.stem = Conv2d::create(1, widths[0], 3, 2, 1, rng);
  int cin = widths[0];
  for (int width : widths) {
    for (int b = 0; b < blocks_per_stage; ++b) {
      const int stride = b == 0 ? 2 : 1;
      Block blk;
      blk.conv1 = Conv2d::create(cin, width, 3, stride, 1, rng);
      blk.conv2 = Conv2d::create(width, width, 3, 1, 1, rng);
      blk.proj = Conv2d::create(cin, width, 1, stride, 0, rng);
      net.blocks.push_back(std::move(blk));
      cin = width;
    }
  }
  net.head = nn::Linear::create(cin, classes, rng);
  return net;
}

ConvNet ConvNet::plain(int classes, const std::vector<int>& widths, Rng& rng) {
  if (widths.empty()) throw ConfigError("plain conv net needs >= 1 layer");
  ConvNet net;
  net.arch_ = Architecture::kPlainConv;
  net.stem = Conv2d::create(1, widths[0], 3, 1, 1, rng);
  for (size_t i = 1; i < widths.size(); ++i) net.blocks.push_back({Conv2d::create(widths[i - 1], widths[i], 3, 1, 1, rng), {}, {}});
  net.head = nn::Linear::create(widths.back(), classes, rng);
  return net;
}

ConvNet ConvNet::from_descriptor(const nlohmann::json& d) {
  ConvNet net;
  net.arch_ = parse_architecture(d.at("kind").get<std::string>());
  net.stem = conv_from_desc(d.at("stem"));
  for (const auto& b : d.at("blocks")) {
    Block blk;
    blk.conv1 = conv_from_desc(b.at("conv1"));
    if (b.contains("conv2")) {
      blk.conv2 = conv_from_desc(b.at("conv2"));
      blk.proj = conv_from_desc(b.at("proj"));
    }
    net.blocks.push_back(std::move(blk));
  }
  const int in = d.at("head").at("in").get<int>(), out = d.at("head").at("out").get<int>();
  net.head.w = Mat::Zero(out, in);
  net.head.b = Vec::Zero(out);
  net.check_structure();
  return net;
}

std::unique_ptr<Network> ConvNet::zeros_like() const {
  auto z = std::make_unique<ConvNet>(*this);
  zero(z->stem);
  for (auto& b : z->blocks) {
    zero(b.conv1);
    if (b.conv2) zero(*b.conv2);
    if (b.proj) zero(*b.proj);
  }
  z->head.w.setZero();
  z->head.b.setZero();
  return z;
}

void ConvNet::check_structure() const {
  auto expect = [](const std::string& layer, int got, int want) {
    if (got != want)
      throw ShapeError("layer " + layer + " expects " + std::to_string(got) + " input channels but its producer emits " +
                       std::to_string(want));
  };
  auto check_conv = [](const std::string& layer, const Conv2d& c) {
    if (c.w.rows() != c.cout || c.w.cols() != c.cin * c.k * c.k || c.b.size() != c.cout)
      throw ShapeError("layer " + layer + " has inconsistent weight shape");
  };
  check_conv("stem", stem);
  int channels = stem.cout;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string name = "blocks." + std::to_string(i);
    check_conv(name + ".conv1", b.conv1);
    expect(name + ".conv1", b.conv1.cin, channels);
    channels = b.conv1.cout;
    if (b.residual()) {
      check_conv(name + ".conv2", *b.conv2);
      check_conv(name + ".proj", *b.proj);
      expect(name + ".conv2", b.conv2->cin, b.conv1.cout);
      expect(name + ".proj", b.proj->cin, b.conv1.cin);
      if (b.proj->cout != b.conv2->cout)
        throw ShapeError("layer " + name + ".proj emits " + std::to_string(b.proj->cout) + " channels but " + name +
                         ".conv2 emits " + std::to_string(b.conv2->cout));
      channels = b.conv2->cout;
    }
  }
  expect("head", static_cast<int>(head.w.cols()), channels);
}

Mat ConvNet::forward(FeatureBatch batch) const { return conv_forward(*this, batch, nullptr); }

float ConvNet::train_batch(FeatureBatch batch, const std::vector<int>& labels, Network& grad_net, Mat* logits_out) const {
  auto& g = dynamic_cast<ConvNet&>(grad_net);
  ConvTrace t;
  const Mat logits = conv_forward(*this, batch, &t);
  Mat dlogits;
  const float loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
  if (logits_out) *logits_out = logits;

  g.head.w.noalias() += dlogits * t.pooled.transpose();
  g.head.b += dlogits.rowwise().sum();
  const Act& last = blocks.empty() ? t.stem_out : t.blocks.back().out;
  Act d = nn::global_avg_pool_backward(head.w.transpose() * dlogits, last.n, last.h, last.w);

  for (size_t i = blocks.size(); i-- > 0;) {
    const Block& blk = blocks[i];
    Block& gb = g.blocks[i];
    const BlockTrace& bt = t.blocks[i];
    nn::relu_backward(bt.out.m, d.m);
    if (blk.residual()) {
      Act da = blk.conv2->backward(bt.a, bt.cols2, d, gb.conv2->w, gb.conv2->b, true);
      Act dxp = blk.proj->backward(bt.in, bt.colsp, d, gb.proj->w, gb.proj->b, true);
      nn::relu_backward(bt.a.m, da.m);
      d = blk.conv1.backward(bt.in, bt.cols1, da, gb.conv1.w, gb.conv1.b, true);
      d.m += dxp.m;
    } else {
      d = blk.conv1.backward(bt.in, bt.cols1, d, gb.conv1.w, gb.conv1.b, true);
    }
  }
  nn::relu_backward(t.stem_out.m, d.m);
  stem.backward(t.input, t.stem_cols, d, g.stem.w, g.stem.b, false);
  return loss;
}

std::vector<ParamBlock> ConvNet::params() {
  std::vector<ParamBlock> out;
  add_conv(out, "stem", stem);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string name = "blocks." + std::to_string(i);
    add_conv(out, name + ".conv1", blocks[i].conv1);
    if (blocks[i].conv2) add_conv(out, name + ".conv2", *blocks[i].conv2);
    if (blocks[i].proj) add_conv(out, name + ".proj", *blocks[i].proj);
  }
  out.push_back({"head.w", head.w.data(), static_cast<size_t>(head.w.size())});
  out.push_back({"head.b", head.b.data(), static_cast<size_t>(head.b.size())});
  return out;
}

nlohmann::json ConvNet::describe() const {
  nlohmann::json blocks_desc = nlohmann::json::array();
  for (const auto& b : blocks) {
    nlohmann::json bd = {{"conv1", conv_desc(b.conv1)}};
    if (b.conv2) {
      bd["conv2"] = conv_desc(*b.conv2);
      bd["proj"] = conv_desc(*b.proj);
    }
    blocks_desc.push_back(bd);
  }
  return {{"kind", to_string(arch_)},
          {"stem", conv_desc(stem)},
          {"blocks", blocks_desc},
          {"head", {{"in", head.w.cols()}, {"out", head.w.rows()}}}};
}

// ----------------------------------------------------------- RecurrentNet

RecurrentNet RecurrentNet::create(int classes, int input_size, int hidden, int n_layers, Rng& rng) {
  if (hidden < 1 || n_layers < 1) throw ConfigError("recurrent net needs hidden >= 1 and layers >= 1");
  RecurrentNet net;
  for (int l = 0; l < n_layers; ++l) net.layers.push_back(nn::LstmLayer::create(l == 0 ? input_size : hidden, hidden, rng));
  net.head = nn::Linear::create(hidden, classes, rng);
  return net;
}

RecurrentNet RecurrentNet::from_descriptor(const nlohmann::json& d) {
  RecurrentNet net;
  for (const auto& l : d.at("layers")) {
    nn::LstmLayer layer;
    layer.in = l.at("in").get<int>();
    layer.hidden = l.at("hidden").get<int>();
    layer.wx = Mat::Zero(4 * layer.hidden, layer.in);
    layer.wh = Mat::Zero(4 * layer.hidden, layer.hidden);
    layer.b = Vec::Zero(4 * layer.hidden);
    net.layers.push_back(std::move(layer));
  }
  const int in = d.at("head").at("in").get<int>(), out = d.at("head").at("out").get<int>();
  net.head.w = Mat::Zero(out, in);
  net.head.b = Vec::Zero(out);
  return net;
}

std::unique_ptr<Network> RecurrentNet::zeros_like() const {
  auto z = std::make_unique<RecurrentNet>(*this);
  for (auto& l : z->layers) {
    l.wx.setZero();
    l.wh.setZero();
    l.b.setZero();
  }
  z->head.w.setZero();
  z->head.b.setZero();
  return z;
}

namespace {

std::vector<Mat> frames_as_steps(FeatureBatch batch) {
  const int frames = batch[0]->frames, bands = batch[0]->bands;
  std::vector<Mat> xs(frames, Mat(bands, static_cast<Eigen::Index>(batch.size())));
  for (size_t j = 0; j < batch.size(); ++j)
    for (int f = 0; f < frames; ++f)
      for (int m = 0; m < bands; ++m) xs[f](m, j) = batch[j]->at(f, m);
  return xs;
}

// Splits a batch into runs of equal frame count, preserving order of first
// appearance; returns index groups.
std::vector<std::vector<size_t>> group_by_frames(FeatureBatch batch) {
  std::map<int, size_t> slot;
  std::vector<std::vector<size_t>> groups;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto [it, fresh] = slot.emplace(batch[i]->frames, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

}  // namespace

Mat RecurrentNet::forward(FeatureBatch batch) const {
  if (batch.empty()) throw ShapeError("empty feature batch");
  Mat logits(num_classes(), static_cast<Eigen::Index>(batch.size()));
  for (const auto& group : group_by_frames(batch)) {
    std::vector<const FeatureMatrix*> sub;
    for (size_t i : group) sub.push_back(batch[i]);
    std::vector<Mat> hs = frames_as_steps(sub);
    for (const auto& layer : layers) hs = layer.forward(hs, nullptr);
    Mat out = head.w * hs.back();
    out.colwise() += head.b;
    for (size_t j = 0; j < group.size(); ++j) logits.col(group[j]) = out.col(j);
  }
  return logits;
}

float RecurrentNet::train_batch(FeatureBatch batch, const std::vector<int>& labels, Network& grad_net, Mat* logits_out) const {
  auto& g = dynamic_cast<RecurrentNet&>(grad_net);
  if (batch.empty()) throw ShapeError("empty feature batch");
  if (logits_out) logits_out->resize(num_classes(), static_cast<Eigen::Index>(batch.size()));
  double total_loss = 0.0;
  const float weight_all = 1.0f / static_cast<float>(batch.size());
  for (const auto& group : group_by_frames(batch)) {
    std::vector<const FeatureMatrix*> sub;
    std::vector<int> sub_labels;
    for (size_t i : group) {
      sub.push_back(batch[i]);
      sub_labels.push_back(labels[i]);
    }
    std::vector<std::vector<Mat>> inputs{frames_as_steps(sub)};
    std::vector<nn::LstmLayer::Trace> traces(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) inputs.push_back(layers[l].forward(inputs[l], &traces[l]));
    Mat logits = head.w * inputs.back().back();
    logits.colwise() += head.b;
    Mat dlogits;
    const float loss = nn::softmax_cross_entropy(logits, sub_labels, &dlogits);
    // softmax_cross_entropy averages over the sub-batch; rescale to the full batch.
    const float scale = static_cast<float>(group.size()) * weight_all;
    dlogits *= scale;
    total_loss += loss * scale;
    if (logits_out)
      for (size_t j = 0; j < group.size(); ++j) logits_out->col(group[j]) = logits.col(j);

    g.head.w.noalias() += dlogits * inputs.back().back().transpose();
    g.head.b += dlogits.rowwise().sum();
    const size_t T = inputs[0].size();
    std::vector<Mat> dh(T, Mat::Zero(layers.back().hidden, static_cast<Eigen::Index>(group.size())));
    dh.back() = head.w.transpose() * dlogits;
    for (size_t l = layers.size(); l-- > 0;)
      dh = layers[l].backward(inputs[l], traces[l], dh, g.layers[l].wx, g.layers[l].wh, g.layers[l].b);
  }
  return static_cast<float>(total_loss);
}

std::vector<ParamBlock> RecurrentNet::params() {
  std::vector<ParamBlock> out;
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string name = "lstm." + std::to_string(l);
    out.push_back({name + ".wx", layers[l].wx.data(), static_cast<size_t>(layers[l].wx.size())});
    out.push_back({name + ".wh", layers[l].wh.data(), static_cast<size_t>(layers[l].wh.size())});
    out.push_back({name + ".b", layers[l].b.data(), static_cast<size_t>(layers[l].b.size())});
  }
  out.push_back({"head.w", head.w.data(), static_cast<size_t>(head.w.size())});
  out.push_back({"head.b", head.b.data(), static_cast<size_t>(head.b.size())});
  return out;
}

nlohmann::json RecurrentNet::describe() const {
  nlohmann::json ls = nlohmann::json::array();
  for (const auto& l : layers) ls.push_back({{"in", l.in}, {"hidden", l.hidden}});
  return {{"kind", "recurrent"}, {"layers", ls}, {"head", {{"in", head.w.cols()}, {"out", head.w.rows()}}}};
}

// ------------------------------------------------------------ VictimModel

VictimModel::VictimModel(std::unique_ptr<Network> net, std::vector<std::string> classes, FeatureConfig features)
    : net_(std::move(net)), classes_(std::move(classes)), features_(features) {
  if (!net_) throw ConfigError("victim model needs a network");
  if (net_->num_classes() != static_cast<int>(classes_.size()))
    throw ShapeError("network output size does not match the class list");
}

VictimModel::VictimModel(const VictimModel& o)
    : provenance(o.provenance), net_(o.net_ ? o.net_->clone() : nullptr), classes_(o.classes_), features_(o.features_) {}

VictimModel& VictimModel::operator=(const VictimModel& o) {
  if (this != &o) {
    provenance = o.provenance;
    net_ = o.net_ ? o.net_->clone() : nullptr;
    classes_ = o.classes_;
    features_ = o.features_;
  }
  return *this;
}

int VictimModel::class_index(const std::string& label) const {
  const auto it = std::find(classes_.begin(), classes_.end(), label);
  return it == classes_.end() ? -1 : static_cast<int>(it - classes_.begin());
}

std::string VictimModel::fingerprint() const {
  std::string buf = net_->describe().dump();
  for (const auto& p : net_->params()) buf.append(reinterpret_cast<const char*>(p.data), p.size * sizeof(float));
  return sha256_hex(buf);
}

void VictimModel::save(const std::filesystem::path& path) const {
  TensorArchive ar;
  ar.meta = {{"format", kFormatName},
             {"version", kFormatVersion},
             {"descriptor", net_->describe()},
             {"classes", classes_},
             {"features", features_.to_json()},
             {"provenance", provenance}};
  for (const auto& p : net_->params())
    ar.put(p.name, {static_cast<std::int64_t>(p.size)}, std::vector<double>(p.data, p.data + p.size));
  ar.save(path);
}

VictimModel VictimModel::load(const std::filesystem::path& path) {
  const TensorArchive ar = TensorArchive::load(path);
  if (ar.meta.value("format", "") != kFormatName) throw FormatError("not a victim checkpoint: " + path.string());
  if (ar.meta.value("version", 0) != kFormatVersion) throw FormatError("unsupported victim checkpoint version");
  const auto& d = ar.meta.at("descriptor");
  std::unique_ptr<Network> net;
  if (d.at("kind") == "recurrent")
    net = std::make_unique<RecurrentNet>(RecurrentNet::from_descriptor(d));
  else
    net = std::make_unique<ConvNet>(ConvNet::from_descriptor(d));
  for (auto& p : net->params()) {
    const NamedArray& a = ar.get(p.name);
    if (a.data.size() != p.size) throw FormatError("victim checkpoint: size mismatch for " + p.name);
    std::transform(a.data.begin(), a.data.end(), p.data, [](double v) { return static_cast<float>(v); });
  }
  VictimModel m(std::move(net), ar.meta.at("classes").get<std::vector<std::string>>(),
                FeatureConfig::from_json(ar.meta.at("features")));
  m.provenance = ar.meta.value("provenance", nlohmann::json::object());
  return m;
}

// ------------------------------------------------------------- prediction

std::vector<Prediction> predict_features(const VictimModel& model, std::span<const FeatureMatrix> features) {
  constexpr size_t kChunk = 64;
  std::vector<Prediction> out;
  out.reserve(features.size());
  for (size_t start = 0; start < features.size(); start += kChunk) {
    const size_t end = std::min(features.size(), start + kChunk);
    std::vector<const FeatureMatrix*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&features[i]);
    const Mat logits = model.net().forward(batch);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const Vec p = nn::softmax(logits.col(j));
      Prediction pr;
      Eigen::Index best = 0;
      p.maxCoeff(&best);
      pr.index = static_cast<int>(best);
      pr.label = model.classes()[best];
      pr.scores.assign(p.data(), p.data() + p.size());
      out.push_back(std::move(pr));
    }
  }
  return out;
}

std::vector<Prediction> predict_batch(const VictimModel& model, std::span<const audio::AudioClip> clips) {
  std::vector<FeatureMatrix> feats;
  feats.reserve(clips.size());
  for (const auto& c : clips) feats.push_back(extract_features(c, model.features()));
  return predict_features(model, feats);
}

Prediction predict(const VictimModel& model, const audio::AudioClip& clip) {
  return predict_batch(model, std::span(&clip, 1)).front();
}

}  // namespace wmtrig::victims
