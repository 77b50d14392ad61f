#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cpr/config.hpp"
#include "cpr/dataset.hpp"
#include "cpr/evaluation.hpp"
#include "cpr/features.hpp"
#include "cpr/image_io.hpp"
#include "cpr/localizer.hpp"
#include "cpr/refinement.hpp"

namespace cpr {

/// Decodes every image of the dataset (relative to its image_root).
std::vector<Image> load_images(const Dataset& dataset);

struct RefinerModel {
  FeatureExtractor extractor;
  RefinerHeads heads;
  std::vector<Category> categories;
  std::string config_hash;
};

RefinerModel make_refiner(const ExtractorConfig& extractor, const std::vector<Category>& categories, int num_stages,
                          std::uint64_t seed);

enum class RefinerObjective {
  kCascade,      // cprpp_training_loss
  kFixedRadius,  // standalone single-stage CPR at a fixed radius
};

struct RefinerTrainOptions {
  TrainParams train;
  CascadeConfig cascade;
  RefinerObjective objective = RefinerObjective::kCascade;
  int radius = 8;  // fixed-radius objective only
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> step_loss;   // mean loss per optimizer step
  std::vector<double> epoch_loss;  // mean loss per epoch
};

using ProgressFn = std::function<void(int epoch, double mean_loss)>;

TrainLog train_refiner(RefinerModel& model, const Dataset& dataset, const std::vector<Image>& images,
                       const RefinerTrainOptions& options, const ProgressFn& progress = {});

/// Fills refined_points of every image from coarse_points. The fixed-radius
/// objective refines with cpr_refine; the cascade with cprpp_infer_image.
void refine_dataset(const RefinerModel& model, Dataset& dataset, const std::vector<Image>& images,
                    const RefinerTrainOptions& options);

/// Mean per-object displacement (pixels) between two refined/coarse point sets
/// keyed by object id.
double mean_displacement(const Dataset& before, const Dataset& after);

enum class PointSource { kCoarse, kRefined };

struct LocalizerModel {
  Localizer localizer;
  std::vector<Category> categories;
  std::string config_hash;
};

TrainLog train_localizer(LocalizerModel& model, const Dataset& dataset, const std::vector<Image>& images,
                         PointSource source, const TrainParams& train, std::uint64_t seed,
                         const ProgressFn& progress = {});

std::vector<PointPrediction> predict_dataset(const LocalizerModel& model, const Dataset& dataset,
                                             const std::vector<Image>& images);

void save_refiner(const RefinerModel& model, const std::filesystem::path& path);
RefinerModel load_refiner(const std::filesystem::path& path);
void save_localizer(const LocalizerModel& model, const std::filesystem::path& path);
LocalizerModel load_localizer(const std::filesystem::path& path);

void save_predictions(const std::vector<PointPrediction>& predictions, const Dataset& dataset,
                      const std::filesystem::path& path);
std::vector<PointPrediction> load_predictions(const std::filesystem::path& path);

}  // namespace cpr
