#include "cpr/log.hpp"

#include <cstdio>
#include <mutex>

namespace cpr {

namespace {

std::mutex g_mutex;

void default_sink(LogLevel level, std::string_view message) {
  if (level == LogLevel::kDebug) return;
  const char* tag = level == LogLevel::kWarning ? "warning: " : level == LogLevel::kError ? "error: " : "";
  std::fprintf(stderr, "%s%.*s\n", tag, static_cast<int>(message.size()), message.data());
}

LogSink& sink() {
  static LogSink s = default_sink;
  return s;
}

}  // namespace

LogSink set_log_sink(LogSink s) {
  std::lock_guard lock(g_mutex);
  LogSink previous = std::move(sink());
  sink() = s ? std::move(s) : LogSink(default_sink);
  return previous;
}

void log(LogLevel level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  sink()(level, message);
}

}  // namespace cpr
