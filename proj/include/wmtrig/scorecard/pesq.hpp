#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>

namespace wmtrig::scorecard {

// Narrow interface to an external ITU-T P.862 implementation.
class PesqScorer {
 public:
  virtual ~PesqScorer() = default;
  // Returns the score, or nullopt with a diagnostic on failure.
  virtual std::optional<double> score(std::span<const double> clean, std::span<const double> degraded,
                                      int sample_rate, std::string* diagnostic) const = 0;
};

class CallableScorer : public PesqScorer {
 public:
  using Fn = std::function<double(std::span<const double>, std::span<const double>, int)>;
  explicit CallableScorer(Fn fn) : fn_(std::move(fn)) {}
  std::optional<double> score(std::span<const double> clean, std::span<const double> degraded, int sample_rate,
                              std::string* diagnostic) const override;

 private:
  Fn fn_;
};

// Runs `command` with {clean}, {degraded} and {rate} substituted (WAV paths
// written to a scratch directory) and parses the last number printed on
// stdout.
class SubprocessScorer : public PesqScorer {
 public:
  explicit SubprocessScorer(std::string command) : command_(std::move(command)) {}
  std::optional<double> score(std::span<const double> clean, std::span<const double> degraded, int sample_rate,
                              std::string* diagnostic) const override;

 private:
  std::string command_;
};

// nullopt when no scorer is registered; never fabricated.
std::optional<double> pesq_score(std::span<const double> clean, std::span<const double> degraded, int sample_rate,
                                 const PesqScorer* scorer, std::string* diagnostic = nullptr);

}  // namespace wmtrig::scorecard
