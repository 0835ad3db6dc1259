#include "wmtrig/common/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace wmtrig::log {
namespace {

Level initial_level() {
  if (const char* env = std::getenv("WMTRIG_LOG_LEVEL")) {
    const std::string v(env);
    if (v == "debug") return Level::kDebug;
    if (v == "warn") return Level::kWarn;
    if (v == "error") return Level::kError;
  }
  return Level::kInfo;
}

std::atomic<Level> g_level{initial_level()};
std::mutex g_mutex;

}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void emit(Level lvl, const std::string& message) {
  if (lvl < g_level.load()) return;
  static constexpr const char* kTags[] = {"DEBUG", "INFO", "WARN", "ERROR"};
  std::lock_guard lock(g_mutex);
  std::cerr << kTags[static_cast<int>(lvl)] << ": " << message << '\n';
}

}  // namespace wmtrig::log
