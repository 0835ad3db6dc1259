#pragma once

#include <bitset>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmtrig/audio/clip.hpp"
#include "wmtrig/forge/layers.hpp"

namespace wmtrig::forge {

inline constexpr int kMessageBits = 12;
using Message = std::bitset<kMessageBits>;

// The first 12 bits of SHA-256(owner), most significant bit first.
Message message_from_owner(std::string_view owner);
std::string message_to_string(const Message& m);
Message message_from_string(std::string_view bits);

// Construction knobs for the built-in surrogate residual generator.
//
// Topology (channels x time, stride S):
//   enc1  conv 1->H, k7, ReLU           rectified +/- copies of the input
//   enc2  conv H->H, k2S, stride S, tanh  smoothed envelope at rate fs/S
//   enc3  conv H->H, k3, tanh           core
//   [latent ; message bits as +/-1 channels broadcast over time]
//   dec1  conv H+12->2H, k3, gated tanh(a) * sigmoid(b)
//   dec2  transposed conv H->H, k2S, stride S   per-channel carriers
//   dec3  conv H->1, k7                 mix to the residual
// The base weights are constructed deterministically rather than learned:
// each decoder channel carries a multiple of fs/S modulated by the input
// envelope and gated by the message.
struct SurrogateOptions {
  int hidden = 8;
  int stride = 16;
  double envelope_gain = 6.0;
  double output_gain = 0.004;
  double carrier_floor = 0.0;  // message-driven carrier present even in silence
  // Carrier gain falls by this many dB per octave above fs/S, keeping the
  // residual's energy where speech masks it.
  double spectral_tilt_db = 0.0;
  bool identity_core = false;
  std::uint64_t seed = 20240917;
};

struct AdapterOptions {
  int rank = 8;
  double scale = 1.0;
  std::uint64_t seed = 0;
};

// Gradients of a scalar objective with respect to every adapter factor,
// flattened in adapter_parameters() order.
using AdapterGradient = std::vector<double>;

class TriggerGenerator {
 public:
  static TriggerGenerator surrogate(const SurrogateOptions& opts, const Message& message,
                                    double alpha);
  static TriggerGenerator load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Attaches zero-initialised low-rank adapters to every decoder convolution.
  void attach_adapters(const AdapterOptions& opts);
  bool has_adapters() const { return dec1_.w.lora.has_value(); }

  int min_length() const { return 4 * stride_; }

  // G(x): generator output including adapters.
  std::vector<double> residual(std::span<const double> x) const;
  // G0(x): frozen base output, adapters ignored.
  std::vector<double> base_residual(std::span<const double> x) const;
  // G_alpha(x): the additive trigger. alpha * G(x) until fine-tuning has
  // absorbed alpha into the adapters, G(x) afterwards.
  std::vector<double> trigger(std::span<const double> x) const;

  double alpha() const { return alpha_; }
  void set_alpha(double alpha);
  bool alpha_absorbed() const { return alpha_absorbed_; }
  void mark_alpha_absorbed() { alpha_absorbed_ = true; }
  const Message& message() const { return message_; }

  std::string base_checksum() const;
  std::string checkpoint_id() const;

  std::vector<double> adapter_parameters() const;
  void set_adapter_parameters(std::span<const double> params);
  size_t adapter_parameter_count() const;

  // Frozen encoder output, reusable across training steps for one input.
  struct Encoded {
    Signal decoder_input;
    int length = 0;
    int padded_length = 0;
  };
  struct DecoderTrace {
    Signal pre_gate;
    Signal gated;
    Signal upsampled;
  };
  Encoded encode(std::span<const double> x) const;
  std::vector<double> decode(const Encoded& enc, DecoderTrace* trace, bool use_adapters) const;
  // Adds dL/d(adapter params) for dL/d(residual) into grad (size must match
  // adapter_parameter_count()).
  void decoder_backward(const Encoded& enc, const DecoderTrace& trace,
                        std::span<const double> d_residual, std::span<double> grad) const;

 private:
  TriggerGenerator() = default;
  void check_input(std::span<const double> x) const;

  int hidden_ = 8;
  int stride_ = 16;
  double alpha_ = 1.0;
  bool alpha_absorbed_ = false;
  Message message_;
  Conv1d enc1_, enc2_, enc3_, dec1_, dec3_;
  ConvTranspose1d dec2_;
};

struct EmbedStats {
  size_t clipped = 0;
};

// x + G_alpha(x), clamped to [-1, 1]. The label is unchanged.
audio::AudioClip embed_trigger(const TriggerGenerator& gen, const audio::AudioClip& clip,
                               EmbedStats* stats = nullptr);

// ClipTransform adapter so watermark triggers plug into poisoning and
// evaluation code.
class WatermarkTrigger : public audio::ClipTransform {
 public:
  explicit WatermarkTrigger(std::shared_ptr<const TriggerGenerator> gen) : gen_(std::move(gen)) {}
  audio::AudioClip apply(const audio::AudioClip& clip) const override;
  std::string describe() const override;
  const TriggerGenerator& generator() const { return *gen_; }

 private:
  std::shared_ptr<const TriggerGenerator> gen_;
};

}  // namespace wmtrig::forge
