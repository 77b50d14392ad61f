#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>

#include "cpr/log.hpp"

int main(int argc, char** argv) {
  // Progress chatter drowns the report; warnings still show.
  cpr::set_log_sink([](cpr::LogLevel level, std::string_view m) {
    if (level >= cpr::LogLevel::kWarning) std::fprintf(stderr, "warning: %.*s\n", static_cast<int>(m.size()), m.data());
  });
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
