#include "wmtrig/scorecard/pesq.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <regex>

#include <unistd.h>

#include "wmtrig/audio/wav.hpp"
#include "wmtrig/common/error.hpp"

namespace wmtrig::scorecard {
namespace fs = std::filesystem;
namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

}  // namespace

std::optional<double> CallableScorer::score(std::span<const double> clean, std::span<const double> degraded,
                                            int sample_rate, std::string* diagnostic) const {
  try {
    const double v = fn_(clean, degraded, sample_rate);
    if (!std::isfinite(v)) {
      if (diagnostic) *diagnostic = "scorer returned a non-finite value";
      return std::nullopt;
    }
    return v;
  } catch (const std::exception& e) {
    if (diagnostic) *diagnostic = std::string("scorer failed: ") + e.what();
    return std::nullopt;
  }
}

std::optional<double> SubprocessScorer::score(std::span<const double> clean, std::span<const double> degraded,
                                              int sample_rate, std::string* diagnostic) const {
  static std::atomic<int> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("wmtrig-pesq-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};
  try {
    fs::create_directories(dir);
    audio::AudioClip c, d;
    c.samples = audio::to_float(clean);
    c.sample_rate = d.sample_rate = sample_rate;
    d.samples = audio::to_float(degraded);
    audio::save_wav(dir / "clean.wav", c);
    audio::save_wav(dir / "degraded.wav", d);
  } catch (const std::exception& e) {
    if (diagnostic) *diagnostic = std::string("cannot stage scorer inputs: ") + e.what();
    return std::nullopt;
  }
  std::string cmd = command_;
  replace_all(cmd, "{clean}", shell_quote((dir / "clean.wav").string()));
  replace_all(cmd, "{degraded}", shell_quote((dir / "degraded.wav").string()));
  replace_all(cmd, "{rate}", std::to_string(sample_rate));
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    if (diagnostic) *diagnostic = "cannot start scorer command";
    return std::nullopt;
  }
  std::string output;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) output += buf;
  const int status = ::pclose(pipe);
  if (status != 0) {
    if (diagnostic) *diagnostic = "scorer command exited with status " + std::to_string(status);
    return std::nullopt;
  }
  static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
  std::optional<double> last;
  for (std::sregex_iterator it(output.begin(), output.end(), number), end; it != end; ++it) last = std::stod(it->str());
  if (!last && diagnostic) *diagnostic = "scorer printed no number";
  return last;
}

std::optional<double> pesq_score(std::span<const double> clean, std::span<const double> degraded, int sample_rate,
                                 const PesqScorer* scorer, std::string* diagnostic) {
  if (!scorer) return std::nullopt;
  if (clean.size() != degraded.size()) throw ShapeError("pesq: length mismatch");
  return scorer->score(clean, degraded, sample_rate, diagnostic);
}

}  // namespace wmtrig::scorecard
