#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cpr/config.hpp"
#include "cpr/dataset.hpp"
#include "cpr/evaluation.hpp"
#include "cpr/trainer.hpp"

namespace cpr {

/// A pipeline stage failed; what() starts with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageRecord {
  std::string name;
  std::vector<std::string> artifacts;
  double seconds = 0.0;
  bool reused = false;
};

struct RunManifest {
  std::string config_hash;
  std::string version;
  std::vector<StageRecord> stages;
};

const char* library_version();

/// Repeated single-stage CPR: each round trains a fresh refiner on the
/// current points and replaces them with its refinement. Zero rounds leaves
/// the annotations untouched. Returns the mean displacement (px) per round.
std::vector<double> iterative_cpr(Dataset& dataset, const std::vector<Image>& images, const ExperimentConfig& config,
                                  int iterations);

/// Stage driver. Artifacts live under config.out; a stage whose artifact is
/// present and was produced under the same config hash is reused.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig config, bool resume = true);

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path path(const std::string& relative) const { return config_.out / relative; }

  void synth();
  void gen_points();
  void train_refiner();
  void refine();
  void train_localizer();
  MetricTable evaluate();
  std::vector<std::filesystem::path> visualize(const std::string& artifact, const std::vector<std::int64_t>& ids);

  /// gen-points -> train-refiner -> refine -> train-localizer -> evaluate
  /// (preceded by synth when no dataset path is configured).
  RunManifest run();

  const RunManifest& manifest() const { return manifest_; }
  /// Table from the most recent evaluate().
  const MetricTable& metrics() const { return metrics_; }

  std::filesystem::path train_annotations() const;
  std::filesystem::path test_annotations() const;

 private:
  template <typename Fn>
  void stage(const std::string& name, const std::vector<std::string>& artifacts, Fn&& fn);
  void load_manifest();
  void save_manifest() const;
  Dataset load_train_source() const;

  ExperimentConfig config_;
  bool resume_;
  RunManifest manifest_;
  MetricTable metrics_;
};

}  // namespace cpr
