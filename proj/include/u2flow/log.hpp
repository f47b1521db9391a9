#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>

namespace u2flow {

// Verbosity from U2FLOW_LOG: 0 = quiet (default 1), 1 = progress, 2 = debug.
inline int log_level() {
  static int level = [] {
    const char* env = std::getenv("U2FLOW_LOG");
    return env ? std::atoi(env) : 1;
  }();
  return level;
}

inline void logf(int level, const char* fmt, ...) {
  if (log_level() < level) return;
  va_list args;
  va_start(args, fmt);
  std::vfprintf(stderr, fmt, args);
  va_end(args);
  std::fputc('\n', stderr);
}

}  // namespace u2flow
