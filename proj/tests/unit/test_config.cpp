#include <doctest.h>

#include "cpr/config.hpp"

using namespace cpr;

TEST_SUITE("config") {
  TEST_CASE("defaults round trip through the canonical text") {
    const ExperimentConfig a;
    const ExperimentConfig b = parse_config(a.to_text());
    CHECK(a.to_text() == b.to_text());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16u);
  }

  TEST_CASE("values, comments and overrides") {
    const auto c = parse_config("# header\nrefine.method = cpr   # trailing\n\nrefine.radius=4\neval.taus = 0.5, 2\n");
    CHECK(c.method == RefineMethod::kCpr);
    CHECK(c.cpr_radius == 4);
    CHECK(c.taus == std::vector<double>{0.5, 2.0});
    ExperimentConfig d = c;
    set_config_value(d, "model.stride", "4");
    CHECK(d.extractor.stride == 4);
    CHECK(d.localizer.extractor.stride == 4);
    CHECK(d.hash() != c.hash());
  }

  TEST_CASE("errors name the line") {
    try {
      parse_config("refine.method = cpr\nno.such.key = 1\n");
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      const std::string m = e.what();
      CHECK(m.find("line 2") != std::string::npos);
      CHECK(m.find("no.such.key") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("refine.method = bogus\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("refine.radius = 4x\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("model.stride = 16\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.txt"), ConfigError);
  }

  TEST_CASE("every listed key parses its own canonical value") {
    const ExperimentConfig base;
    const std::string text = base.to_text();
    for (const auto& key : config_keys()) {
      INFO(key);
      CHECK(text.find(key + " = ") != std::string::npos);
    }
  }
}
