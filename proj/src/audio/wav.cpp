#include "wmtrig/audio/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "wmtrig/audio/resample.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/log.hpp"

namespace wmtrig::audio {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path, WavReadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file" + where);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + 16 > bytes.size()) throw FormatError("short fmt chunk" + where);
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == kFormatExtensible && len >= 26 && body + 26 <= bytes.size())
        format = read_u16(bytes.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = static_cast<std::uint32_t>(
          std::min<size_t>(len, bytes.size() - std::min(body, bytes.size())));
      break;
    }
    pos = body + len + (len & 1);
  }
  if (format == 0) throw FormatError("missing fmt chunk" + where);
  if (data == nullptr) throw FormatError("missing data chunk" + where);
  if (channels == 0 || rate == 0) throw FormatError("invalid channel count or rate" + where);

  const bool is_int16 = format == kFormatPcm && bits == 16;
  const bool is_f32 = format == kFormatFloat && bits == 32;
  if (!is_int16 && !is_f32)
    throw FormatError("unsupported encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits)" + where);

  const size_t frame_bytes = static_cast<size_t>(channels) * (bits / 8);
  const size_t frames = data_len / frame_bytes;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.clip_id = path.string();
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    const unsigned char* p = data + i * frame_bytes;
    if (is_int16) {
      clip.samples[i] = static_cast<float>(static_cast<std::int16_t>(read_u16(p))) / 32768.0f;
    } else {
      std::uint32_t raw = read_u32(p);
      float v;
      std::memcpy(&v, &raw, sizeof v);
      clip.samples[i] = v;
    }
  }
  if (report) {
    report->channels = channels;
    report->bits_per_sample = bits;
    report->is_float = is_f32;
  }
  if (channels > 1) {
    const std::string msg = "reduced " + std::to_string(channels) +
                            "-channel input to channel 0" + where;
    WMTRIG_WARN << msg;
    if (report) report->warnings.push_back(msg);
  }
  return clip;
}

AudioClip load_wav_canonical(const std::filesystem::path& path, WavReadReport* report) {
  AudioClip clip = load_wav(path, report);
  if (clip.sample_rate != kCanonicalRate) {
    const auto x = to_double(clip.samples);
    clip.samples = to_float(resample(x, clip.sample_rate, kCanonicalRate));
    clip.sample_rate = kCanonicalRate;
  }
  return clip;
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw FormatError("cannot write clip with non-positive rate");
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_len);
  for (float s : clip.samples) {
    const double scaled = std::nearbyint(static_cast<double>(s) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write wav: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("wav write failed: " + path.string());
}

}  // namespace wmtrig::audio
