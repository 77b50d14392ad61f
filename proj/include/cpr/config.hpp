#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cpr/features.hpp"
#include "cpr/localizer.hpp"
#include "cpr/refinement.hpp"

namespace cpr {

struct SynthParams {
  int train_images = 500;
  int test_images = 100;
  int categories = 3;
  int image_size = 160;
  double min_size = 8.0;
  double max_size = 120.0;
  int min_objects = 2;
  int max_objects = 6;
  double clutter = 0.3;
};

enum class RefineMethod {
  kNone,       // localizer trains on the raw coarse points
  kCpr,        // single stage at a fixed radius
  kCprpp,      // cascade
  kIterative,  // repeated single-stage CPR, retrained from scratch each round
};

struct TrainParams {
  int epochs = 12;
  int batch = 8;
  double lr = 2e-3;
  double weight_decay = 1e-4;
  bool flip = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";

  // Empty path: synthesize the shapes dataset.
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  AnnotationFormat format = AnnotationFormat::kCocoJson;
  SynthParams synth;

  double point_sigma = 0.25;

  ExtractorConfig extractor;

  RefineMethod method = RefineMethod::kCprpp;
  int cpr_radius = 8;
  int iterations = 1;
  CascadeConfig cascade;
  TrainParams refiner_train;

  LocalizerConfig localizer;
  int localizer_stride = 0;  // 0 follows extractor.stride
  TrainParams localizer_train;

  std::vector<double> taus{0.5, 1.0, 2.0};

  /// Canonical key = value text; identical configs give identical text.
  std::string to_text() const;
  /// FNV-1a of to_text(), as 16 hex digits.
  std::string hash() const;
};

/// Parses flat "key = value" lines over the defaults. '#' starts a comment.
/// Unknown keys and malformed values raise ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one "key=value" override (used for CLI flags).
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

std::vector<std::string> config_keys();

const char* to_string(RefineMethod method);
const char* to_string(CascadeMode mode);

}  // namespace cpr
