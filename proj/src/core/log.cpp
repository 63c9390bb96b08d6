#include "obac/log.hpp"

#include <atomic>
#include <iostream>

namespace obac {

namespace {
std::atomic<LogLevel> g_level{LogLevel::warning};

const char* tag(LogLevel l) {
  switch (l) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
    case LogLevel::silent: return "";
  }
  return "";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_message(LogLevel level, std::string_view message) {
  if (level < g_level.load() || level == LogLevel::silent) return;
  std::cerr << "[obac " << tag(level) << "] " << message << '\n';
}

}  // namespace obac
