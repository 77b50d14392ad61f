#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace cpr {

enum class LogLevel { kDebug, kInfo, kWarning, kError };

using LogSink = std::function<void(LogLevel, std::string_view)>;

/// Replaces the process-wide sink and returns the previous one. The default
/// sink writes info and above to stderr.
LogSink set_log_sink(LogSink sink);

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::kInfo, m); }
inline void log_warning(std::string_view m) { log(LogLevel::kWarning, m); }
inline void log_debug(std::string_view m) { log(LogLevel::kDebug, m); }

/// Scoped sink swap, handy in tests that assert on warnings.
class ScopedLogCapture {
 public:
  explicit ScopedLogCapture(LogSink sink) : previous_(set_log_sink(std::move(sink))) {}
  ~ScopedLogCapture() { set_log_sink(std::move(previous_)); }
  ScopedLogCapture(const ScopedLogCapture&) = delete;
  ScopedLogCapture& operator=(const ScopedLogCapture&) = delete;

 private:
  LogSink previous_;
};

}  // namespace cpr
