#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace kronfisher::log {

enum class Level { Debug = 0, Info = 1, Warn = 2 };

// KRONFISHER_LOG=debug|info; anything else (or unset) means warnings only.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("KRONFISHER_LOG");
    const std::string_view v = env ? env : "";
    if (v == "debug") return Level::Debug;
    if (v == "info") return Level::Info;
    return Level::Warn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (level < threshold()) return;
  static constexpr const char* tags[] = {"debug", "info", "warn"};
  std::cerr << "[kronfisher " << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::Debug, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void warn(std::string_view msg) { write(Level::Warn, msg); }

}  // namespace kronfisher::log
