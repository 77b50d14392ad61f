#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/evaluation.hpp"
#include "cpr/image_io.hpp"
#include "cpr/refinement.hpp"
#include "cpr/trainer.hpp"

namespace cpr {

using Color = std::array<std::uint8_t, 3>;

inline constexpr Color kGreen{40, 220, 60};
inline constexpr Color kYellow{250, 230, 30};
inline constexpr Color kRed{235, 40, 40};

void draw_marker(Image& image, Point2 p, int radius, Color color);
void draw_rect(Image& image, double x0, double y0, double x1, double y1, Color color);

/// Blends a [0, 1] score map (any resolution) over the image with a
/// blue-to-red ramp, upsampled bilinearly.
Image overlay_heatmap(const Image& image, const Tensor3<double>& scores, int channel, double alpha = 0.55);

/// Annotated (green) and refined (yellow) points.
Image render_refined(const Image& image, const ImageRecord& record);

/// Semantic points (red) with their bounding box, plus annotated and refined points.
Image render_semantic(const Image& image, const ImageRecord& record, std::span<const SemanticPointSet> semantic,
                      int stride);

/// Predictions coloured by category; brighter markers for higher scores.
Image render_predictions(const Image& image, std::span<const PointPrediction> predictions, int num_categories);

enum class VisualArtifact { kHeatmaps, kRefinedPoints, kPredictions };

struct VisualizeRequest {
  VisualArtifact artifact = VisualArtifact::kRefinedPoints;
  std::vector<std::int64_t> image_ids;  // empty: every image
  std::filesystem::path out_dir;
  const RefinerModel* refiner = nullptr;                     // heatmaps
  const CascadeConfig* cascade = nullptr;                    // heatmaps: stage count
  const std::vector<PointPrediction>* predictions = nullptr;  // predictions
};

/// Writes PNG files and returns their paths. Unknown image ids are logged and skipped.
std::vector<std::filesystem::path> visualize(const Dataset& dataset, const std::vector<Image>& images,
                                             const VisualizeRequest& request);

}  // namespace cpr
