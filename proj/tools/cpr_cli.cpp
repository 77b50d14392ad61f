#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cpr/config.hpp"
#include "cpr/pipeline.hpp"

namespace {

struct Common {
  std::string config_path;
  std::int64_t seed = -1;
  std::string out;
  std::vector<std::string> overrides;
  bool skip_refine = false;
  bool fresh = false;
};

cpr::ExperimentConfig build_config(const Common& c) {
  cpr::ExperimentConfig cfg = c.config_path.empty() ? cpr::ExperimentConfig{} : cpr::load_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw cpr::ConfigError(fmt::format("--set expects key=value, got '{}'", kv));
    cpr::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (!c.out.empty()) cfg.out = c.out;
  if (c.skip_refine) cfg.method = cpr::RefineMethod::kNone;
  return cfg;
}

std::vector<std::int64_t> parse_ids(const std::string& text) {
  std::vector<std::int64_t> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string tok = text.substr(pos, comma - pos);
    if (!tok.empty()) {
      try {
        ids.push_back(std::stoll(tok));
      } catch (const std::exception&) {
        throw cpr::ConfigError(fmt::format("bad image id '{}'", tok));
      }
    }
    pos = comma + 1;
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse point refinement experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cpr::library_version()));

  Common common;
  std::string artifact = "refined-points";
  std::string ids;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Config file (key = value)")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_option("--out", common.out, "Override the output directory");
    sub->add_option("--set", common.overrides, "Extra key=value overrides")->take_all();
  };

  struct Entry {
    const char* name;
    const char* help;
  };
  const std::vector<Entry> entries{
      {"synth", "Write the synthetic shapes dataset"},
      {"gen-points", "Simulate coarse point annotations"},
      {"train-refiner", "Train the point refiner"},
      {"refine", "Refine the annotated points"},
      {"train-localizer", "Train the point localizer"},
      {"evaluate", "Predict on the test set and report mAP"},
      {"visualize", "Render heatmaps, refined points or predictions"},
      {"pipeline", "Run every stage, reusing finished ones"},
  };
  for (const auto& e : entries) add_common(app.add_subcommand(e.name, e.help));
  auto* vis = app.get_subcommand("visualize");
  vis->add_option("--artifact", artifact, "heatmaps | refined-points | predictions")
      ->check(CLI::IsMember({"heatmaps", "refined-points", "predictions"}));
  vis->add_option("--ids", ids, "Comma-separated image ids (default: all)");
  auto* pipe = app.get_subcommand("pipeline");
  pipe->add_flag("--skip-refine", common.skip_refine, "Train the localizer on the raw coarse points");
  pipe->add_flag("--fresh", common.fresh, "Ignore finished stages and rerun everything");

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    const cpr::ExperimentConfig cfg = build_config(common);
    const std::string name = app.get_subcommands().front()->get_name();
    stage = name;
    // Single stages always rerun; pipeline resumes unless --fresh.
    cpr::Pipeline pipeline(cfg, name == "pipeline" && !common.fresh);
    if (name == "synth") {
      pipeline.synth();
    } else if (name == "gen-points") {
      pipeline.gen_points();
    } else if (name == "train-refiner") {
      pipeline.train_refiner();
    } else if (name == "refine") {
      pipeline.refine();
    } else if (name == "train-localizer") {
      pipeline.train_localizer();
    } else if (name == "evaluate") {
      std::cout << cpr::format_metric_table(pipeline.evaluate());
    } else if (name == "visualize") {
      for (const auto& p : pipeline.visualize(artifact, parse_ids(ids))) std::cout << p.string() << '\n';
    } else {
      const auto manifest = pipeline.run();
      for (const auto& s : manifest.stages)
        std::cout << fmt::format("{:<16} {:>9.1f} s{}\n", s.name, s.seconds, s.reused ? " (reused)" : "");
      std::cout << cpr::format_metric_table(pipeline.metrics());
    }
  } catch (const cpr::StageError& e) {
    std::fprintf(stderr, "error: stage %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: stage %s: %s\n", stage.c_str(), e.what());
    return 2;
  }
  return 0;
}
