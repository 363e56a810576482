#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace fino {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Level from FINO_LOG_LEVEL in {error, info, debug}; defaults to info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("FINO_LOG_LEVEL");
    if (env && std::strcmp(env, "error") == 0) return LogLevel::error;
    if (env && std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_at(LogLevel level, const char* prefix, const char* fmt, va_list args) {
  if (level > log_level()) return;
  std::fprintf(stderr, "%s", prefix);
  std::vfprintf(stderr, fmt, args);
  std::fprintf(stderr, "\n");
}

inline void log_error(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  log_at(LogLevel::error, "[fino] error: ", fmt, args);
  va_end(args);
}

inline void log_info(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  log_at(LogLevel::info, "[fino] ", fmt, args);
  va_end(args);
}

inline void log_debug(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  log_at(LogLevel::debug, "[fino] debug: ", fmt, args);
  va_end(args);
}

}  // namespace fino
