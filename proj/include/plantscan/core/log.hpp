#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace plantscan {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Silent = 3 };

inline std::atomic<LogLevel>& log_level() {
  static std::atomic<LogLevel> level{LogLevel::Warn};
  return level;
}

inline void log(LogLevel level, std::string_view msg) {
  if (level < log_level().load()) return;
  static constexpr std::string_view tags[] = {"debug", "info", "warn"};
  std::clog << "[plantscan:" << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void log_info(std::string_view msg) { log(LogLevel::Info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::Warn, msg); }

}  // namespace plantscan
