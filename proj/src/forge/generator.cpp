#include "wmtrig/forge/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "wmtrig/common/error.hpp"
#include "wmtrig/common/hash.hpp"
#include "wmtrig/common/tensor_archive.hpp"

namespace wmtrig::forge {
namespace {

constexpr const char* kFormatName = "wmtrig-generator";
constexpr int kFormatVersion = 1;

std::vector<double> flatten(const Eigen::MatrixXd& m) { return {m.data(), m.data() + m.size()}; }

void append_bytes(std::string& buf, const Eigen::MatrixXd& m) {
  buf.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
}
void append_bytes(std::string& buf, const Eigen::VectorXd& v) {
  buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

template <typename Layer>
void put_layer(TensorArchive& ar, const std::string& name, const Layer& layer) {
  const auto& w = layer.w;
  ar.put(name + ".weight", {w.base.rows(), w.base.cols()}, flatten(w.base));
  ar.put(name + ".bias", {w.bias.size()}, {w.bias.data(), w.bias.data() + w.bias.size()});
  if (w.lora) {
    ar.put(name + ".lora.down", {w.lora->down.rows(), w.lora->down.cols()}, flatten(w.lora->down));
    ar.put(name + ".lora.up", {w.lora->up.rows(), w.lora->up.cols()}, flatten(w.lora->up));
  }
}

Eigen::MatrixXd read_matrix(const TensorArchive& ar, const std::string& name,
                            Eigen::Index rows, Eigen::Index cols) {
  const NamedArray& a = ar.get(name);
  if (a.shape.size() != 2 || a.shape[0] != rows || a.shape[1] != cols)
    throw FormatError("generator checkpoint: unexpected shape for " + name);
  return Eigen::Map<const Eigen::MatrixXd>(a.data.data(), rows, cols);
}

template <typename Layer>
void get_layer(const TensorArchive& ar, const std::string& name, Layer& layer, int rank,
               double scale) {
  auto& w = layer.w;
  w.base = read_matrix(ar, name + ".weight", w.base.rows(), w.base.cols());
  const NamedArray& b = ar.get(name + ".bias");
  if (static_cast<Eigen::Index>(b.data.size()) != w.bias.size())
    throw FormatError("generator checkpoint: unexpected bias size for " + name);
  w.bias = Eigen::Map<const Eigen::VectorXd>(b.data.data(), w.bias.size());
  if (rank > 0) {
    LoraAdapter a;
    a.rank = rank;
    a.scale = scale;
    a.down = read_matrix(ar, name + ".lora.down", rank, w.base.cols());
    a.up = read_matrix(ar, name + ".lora.up", w.base.rows(), rank);
    w.lora = std::move(a);
  }
}

template <typename Fn>
void for_each_adapter(const Conv1d& d1, const ConvTranspose1d& d2, const Conv1d& d3, Fn&& fn) {
  fn(d1.w);
  fn(d2.w);
  fn(d3.w);
}

}  // namespace

Message message_from_owner(std::string_view owner) {
  const std::uint64_t v = sha256_u64(owner);
  return Message(static_cast<unsigned long long>(v >> (64 - kMessageBits)));
}

std::string message_to_string(const Message& m) { return m.to_string(); }

Message message_from_string(std::string_view bits) {
  if (bits.size() != kMessageBits || bits.find_first_not_of("01") != std::string_view::npos)
    throw ConfigError("message must be exactly 12 characters of 0/1");
  return Message(std::string(bits));
}

TriggerGenerator TriggerGenerator::surrogate(const SurrogateOptions& o, const Message& message,
                                             double alpha) {
  if (o.hidden < 2 || o.hidden % 2 != 0) throw ConfigError("surrogate: hidden must be even and >= 2");
  if (o.stride < 4 || o.stride % 2 != 0) throw ConfigError("surrogate: stride must be even and >= 4");
  if (!std::isfinite(o.spectral_tilt_db)) throw ConfigError("surrogate: spectral tilt must be finite");
  const int h = o.hidden;
  const int s = o.stride;
  const int k2 = 2 * s;
  TriggerGenerator g;
  g.hidden_ = h;
  g.stride_ = s;
  g.message_ = message;
  g.set_alpha(alpha);
  g.enc1_ = Conv1d(1, h, 7, 1, 3, 3);
  g.enc2_ = Conv1d(h, h, k2, s, s / 2, s / 2);
  g.enc3_ = Conv1d(h, h, 3, 1, 1, 1);
  g.dec1_ = Conv1d(h + kMessageBits, 2 * h, 3, 1, 1, 1);
  g.dec2_ = ConvTranspose1d(h, h, k2, s, s / 2, s / 2);
  g.dec3_ = Conv1d(h, 1, 7, 1, 3, 3);
  Rng rng(o.seed);

  // enc1: channel pairs see +x / -x through a per-pair front filter.
  const int pairs = h / 2;
  for (int p = 0; p < pairs; ++p) {
    std::array<double, 7> taps{};
    switch (p % 3) {
      case 0: taps[3] = 1.0; break;                                   // raw
      case 1: taps[3] = 1.0; taps[2] = -0.9; break;                   // pre-emphasis
      default: taps[2] = 0.25; taps[3] = 0.5; taps[4] = 0.25; break;  // smoothed
    }
    for (int k = 0; k < 7; ++k) {
      g.enc1_.w.base(2 * p, k) = taps[k];
      g.enc1_.w.base(2 * p + 1, k) = -taps[k];
    }
  }

  // enc2: Hann-weighted average of each rectified pair -> envelope.
  std::vector<double> hann(k2);
  double hann_sum = 0.0;
  for (int k = 0; k < k2; ++k) {
    hann[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / k2);
    hann_sum += hann[k];
  }
  for (int j = 0; j < h; ++j) {
    const int p = j % pairs;
    for (int c : {2 * p, 2 * p + 1})
      for (int k = 0; k < k2; ++k) g.enc2_.w.base(j, c * k2 + k) = o.envelope_gain * hann[k] / hann_sum;
  }

  // enc3: identity core, optionally with light channel mixing.
  for (int j = 0; j < h; ++j) {
    g.enc3_.w.base(j, j * 3 + 1) = 1.0;
    if (!o.identity_core)
      for (int c = 0; c < h; ++c) g.enc3_.w.base(j, c * 3 + 1) += 0.1 * rng.normal() / std::sqrt(h);
  }

  // dec1: filter half follows the envelope, gate half reads the message.
  for (int j = 0; j < h; ++j) {
    g.dec1_.w.base(j, j * 3 + 1) = 1.5;
    const int bit = j % kMessageBits;
    g.dec1_.w.base(j, (h + bit) * 3 + 1) = o.carrier_floor;
    for (int b = 0; b < kMessageBits; ++b)
      g.dec1_.w.base(h + j, (h + b) * 3 + 1) = 0.4 * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    g.dec1_.w.bias(h + j) = 0.5;
  }

  // dec2: each channel carries a multiple of fs/S; Hann at hop S overlap-adds
  // to a continuous sinusoid.
  const int harmonics = s / 2 - 1;
  for (int c = 0; c < h; ++c) {
    const double freq_cycles = static_cast<double>(c % harmonics + 1) / s;  // cycles per sample
    const double phase = (c / harmonics) * std::numbers::pi / 2.0;
    for (int k = 0; k < k2; ++k)
      g.dec2_.w.base(c * k2 + k, c) = hann[k] * std::cos(2.0 * std::numbers::pi * freq_cycles * k + phase);
  }

  // dec3: per-channel output gain, optionally tilted toward the low carriers
  // with the mean-square gain over channels held at one.
  std::vector<double> tilt(h, 1.0);
  if (o.spectral_tilt_db != 0.0) {
    double ms = 0.0;
    for (int c = 0; c < h; ++c) {
      tilt[c] = std::pow(10.0, -o.spectral_tilt_db * std::log2(c % harmonics + 1.0) / 20.0);
      ms += tilt[c] * tilt[c] / h;
    }
    for (double& t : tilt) t /= std::sqrt(ms);
  }
  for (int c = 0; c < h; ++c)
    g.dec3_.w.base(0, c * 7 + 3) = o.output_gain * tilt[c] * (1.0 + 0.25 * rng.uniform(-1.0, 1.0));
  return g;
}

void TriggerGenerator::set_alpha(double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  alpha_ = alpha;
}

void TriggerGenerator::attach_adapters(const AdapterOptions& opts) {
  Rng rng(opts.seed);
  auto attach = [&](AdaptedWeight& w) {
    w.lora = LoraAdapter::create(w.base.rows(), w.base.cols(), opts.rank, opts.scale, rng);
  };
  attach(dec1_.w);
  attach(dec2_.w);
  attach(dec3_.w);
}

void TriggerGenerator::check_input(std::span<const double> x) const {
  if (static_cast<int>(x.size()) < min_length())
    throw ShapeError("generator: input of " + std::to_string(x.size()) +
                     " samples is below the minimum receptive field of " +
                     std::to_string(min_length()));
}

TriggerGenerator::Encoded TriggerGenerator::encode(std::span<const double> x) const {
  check_input(x);
  Encoded e;
  e.length = static_cast<int>(x.size());
  e.padded_length = (e.length + stride_ - 1) / stride_ * stride_;
  Signal in = Signal::Zero(1, e.padded_length);
  for (int t = 0; t < e.length; ++t) in(0, t) = x[t];
  Signal h1 = enc1_.forward(in).cwiseMax(0.0);
  Signal h2 = enc2_.forward(h1).array().tanh().matrix();
  Signal h3 = enc3_.forward(h2).array().tanh().matrix();
  e.decoder_input.resize(hidden_ + kMessageBits, h3.cols());
  e.decoder_input.topRows(hidden_) = h3;
  for (int b = 0; b < kMessageBits; ++b)
    e.decoder_input.row(hidden_ + b).setConstant(message_[kMessageBits - 1 - b] ? 1.0 : -1.0);
  return e;
}

std::vector<double> TriggerGenerator::decode(const Encoded& enc, DecoderTrace* trace,
                                             bool use_adapters) const {
  Signal pre = dec1_.forward(enc.decoder_input, use_adapters);
  const auto a = pre.topRows(hidden_).array();
  const auto b = pre.bottomRows(hidden_).array();
  Signal gated = (a.tanh() * (1.0 / (1.0 + (-b).exp()))).matrix();
  Signal up = dec2_.forward(gated, use_adapters);
  Signal y = dec3_.forward(up, use_adapters);
  std::vector<double> out(y.data(), y.data() + enc.length);
  if (trace) {
    trace->pre_gate = std::move(pre);
    trace->gated = std::move(gated);
    trace->upsampled = std::move(up);
  }
  return out;
}

void TriggerGenerator::decoder_backward(const Encoded& enc, const DecoderTrace& trace,
                                        std::span<const double> d_residual,
                                        std::span<double> grad) const {
  if (!has_adapters()) throw ConfigError("decoder_backward: no adapters attached");
  if (grad.size() != adapter_parameter_count()) throw ShapeError("adapter gradient size mismatch");
  if (static_cast<int>(d_residual.size()) != enc.length) throw ShapeError("residual gradient length mismatch");
  Signal dy = Signal::Zero(1, enc.padded_length);
  for (int t = 0; t < enc.length; ++t) dy(0, t) = d_residual[t];

  Eigen::MatrixXd dw3, dw2, dw1;
  const Signal d_up = dec3_.backward(trace.upsampled, dy, &dw3);
  const Signal d_gated = dec2_.backward(trace.gated, d_up, &dw2);
  const auto a = trace.pre_gate.topRows(hidden_).array();
  const auto b = trace.pre_gate.bottomRows(hidden_).array();
  const Eigen::ArrayXXd ta = a.tanh();
  const Eigen::ArrayXXd sb = 1.0 / (1.0 + (-b).exp());
  Signal d_pre(2 * hidden_, trace.pre_gate.cols());
  d_pre.topRows(hidden_) = (d_gated.array() * sb * (1.0 - ta.square())).matrix();
  d_pre.bottomRows(hidden_) = (d_gated.array() * ta * sb * (1.0 - sb)).matrix();
  dec1_.backward(enc.decoder_input, d_pre, &dw1, /*need_input_grad=*/false);

  size_t offset = 0;
  auto accumulate = [&](const AdaptedWeight& w, const Eigen::MatrixXd& dw) {
    const LoraGrad g = w.adapter_grad(dw);
    for (Eigen::Index i = 0; i < g.down.size(); ++i) grad[offset++] += g.down.data()[i];
    for (Eigen::Index i = 0; i < g.up.size(); ++i) grad[offset++] += g.up.data()[i];
  };
  accumulate(dec1_.w, dw1);
  accumulate(dec2_.w, dw2);
  accumulate(dec3_.w, dw3);
}

std::vector<double> TriggerGenerator::residual(std::span<const double> x) const {
  return decode(encode(x), nullptr, true);
}

std::vector<double> TriggerGenerator::base_residual(std::span<const double> x) const {
  return decode(encode(x), nullptr, false);
}

std::vector<double> TriggerGenerator::trigger(std::span<const double> x) const {
  std::vector<double> w = residual(x);
  if (!alpha_absorbed_)
    for (auto& v : w) v *= alpha_;
  return w;
}

size_t TriggerGenerator::adapter_parameter_count() const {
  size_t n = 0;
  for_each_adapter(dec1_, dec2_, dec3_, [&](const AdaptedWeight& w) {
    if (w.lora) n += w.lora->down.size() + w.lora->up.size();
  });
  return n;
}

std::vector<double> TriggerGenerator::adapter_parameters() const {
  std::vector<double> out;
  out.reserve(adapter_parameter_count());
  for_each_adapter(dec1_, dec2_, dec3_, [&](const AdaptedWeight& w) {
    if (!w.lora) return;
    out.insert(out.end(), w.lora->down.data(), w.lora->down.data() + w.lora->down.size());
    out.insert(out.end(), w.lora->up.data(), w.lora->up.data() + w.lora->up.size());
  });
  return out;
}

void TriggerGenerator::set_adapter_parameters(std::span<const double> params) {
  if (params.size() != adapter_parameter_count()) throw ShapeError("adapter parameter count mismatch");
  size_t offset = 0;
  auto fill = [&](AdaptedWeight& w) {
    if (!w.lora) return;
    for (Eigen::Index i = 0; i < w.lora->down.size(); ++i) w.lora->down.data()[i] = params[offset++];
    for (Eigen::Index i = 0; i < w.lora->up.size(); ++i) w.lora->up.data()[i] = params[offset++];
  };
  fill(dec1_.w);
  fill(dec2_.w);
  fill(dec3_.w);
}

std::string TriggerGenerator::base_checksum() const {
  std::string buf;
  auto add = [&](const AdaptedWeight& w) {
    append_bytes(buf, w.base);
    append_bytes(buf, w.bias);
  };
  add(enc1_.w);
  add(enc2_.w);
  add(enc3_.w);
  add(dec1_.w);
  add(dec2_.w);
  add(dec3_.w);
  return sha256_hex(buf);
}

std::string TriggerGenerator::checkpoint_id() const {
  std::ostringstream s;
  s.precision(17);
  s << base_checksum() << '|' << alpha_ << '|' << alpha_absorbed_ << '|' << message_.to_string() << '|';
  std::string buf = s.str();
  const auto p = adapter_parameters();
  buf.append(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double));
  return sha256_hex(buf).substr(0, 16);
}

void TriggerGenerator::save(const std::filesystem::path& path) const {
  TensorArchive ar;
  ar.meta = {{"format", kFormatName},
             {"version", kFormatVersion},
             {"hidden", hidden_},
             {"stride", stride_},
             {"alpha", alpha_},
             {"alpha_absorbed", alpha_absorbed_},
             {"message", message_.to_string()},
             {"adapter_rank", has_adapters() ? dec1_.w.lora->rank : 0},
             {"adapter_scale", has_adapters() ? dec1_.w.lora->scale : 0.0},
             {"base_checksum", base_checksum()}};
  put_layer(ar, "enc1", enc1_);
  put_layer(ar, "enc2", enc2_);
  put_layer(ar, "enc3", enc3_);
  put_layer(ar, "dec1", dec1_);
  put_layer(ar, "dec2", dec2_);
  put_layer(ar, "dec3", dec3_);
  ar.save(path);
}

TriggerGenerator TriggerGenerator::load(const std::filesystem::path& path) {
  const TensorArchive ar = TensorArchive::load(path);
  if (ar.meta.value("format", "") != kFormatName)
    throw FormatError("not a generator checkpoint: " + path.string());
  if (ar.meta.value("version", 0) != kFormatVersion)
    throw FormatError("unsupported generator checkpoint version");
  SurrogateOptions shape;
  shape.hidden = ar.meta.at("hidden").get<int>();
  shape.stride = ar.meta.at("stride").get<int>();
  TriggerGenerator g = surrogate(shape, message_from_string(ar.meta.at("message").get<std::string>()),
                                 ar.meta.at("alpha").get<double>());
  g.alpha_absorbed_ = ar.meta.at("alpha_absorbed").get<bool>();
  const int rank = ar.meta.value("adapter_rank", 0);
  const double scale = ar.meta.value("adapter_scale", 1.0);
  get_layer(ar, "enc1", g.enc1_, 0, 0.0);
  get_layer(ar, "enc2", g.enc2_, 0, 0.0);
  get_layer(ar, "enc3", g.enc3_, 0, 0.0);
  get_layer(ar, "dec1", g.dec1_, rank, scale);
  get_layer(ar, "dec2", g.dec2_, rank, scale);
  get_layer(ar, "dec3", g.dec3_, rank, scale);
  if (ar.meta.contains("base_checksum") && ar.meta["base_checksum"] != g.base_checksum())
    throw FormatError("generator checkpoint: base checksum mismatch");
  return g;
}

audio::AudioClip embed_trigger(const TriggerGenerator& gen, const audio::AudioClip& clip,
                               EmbedStats* stats) {
  clip.validate();
  if (clip.sample_rate != audio::kCanonicalRate)
    throw ConfigError("embed_trigger: clip must be at the canonical sample rate");
  const auto x = audio::to_double(clip.samples);
  audio::AudioClip out = clip;
  if (gen.alpha() == 0.0 && !gen.alpha_absorbed()) {
    if (stats) stats->clipped = 0;
    return out;
  }
  const auto w = gen.trigger(x);
  size_t clipped = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    double v = x[i] + w[i];
    if (v > 1.0 || v < -1.0) {
      ++clipped;
      v = std::clamp(v, -1.0, 1.0);
    }
    out.samples[i] = static_cast<float>(v);
  }
  if (stats) stats->clipped = clipped;
  return out;
}

audio::AudioClip WatermarkTrigger::apply(const audio::AudioClip& clip) const {
  return embed_trigger(*gen_, clip);
}

std::string WatermarkTrigger::describe() const { return "watermark:" + gen_->checkpoint_id(); }

}  // namespace wmtrig::forge
