#pragma once

#include <sstream>
#include <string>

namespace wmtrig::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

void set_level(Level level);
Level level();
void emit(Level level, const std::string& message);

// Collects one message and emits it on destruction.
class Line {
 public:
  explicit Line(Level level) : level_(level) {}
  ~Line() { emit(level_, stream_.str()); }
  template <typename T>
  Line& operator<<(const T& v) {
    stream_ << v;
    return *this;
  }

 private:
  Level level_;
  std::ostringstream stream_;
};

}  // namespace wmtrig::log

#define WMTRIG_LOG ::wmtrig::log::Line(::wmtrig::log::Level::kInfo)
#define WMTRIG_WARN ::wmtrig::log::Line(::wmtrig::log::Level::kWarn)
#define WMTRIG_DEBUG ::wmtrig::log::Line(::wmtrig::log::Level::kDebug)
