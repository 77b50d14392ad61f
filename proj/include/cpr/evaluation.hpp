#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/types.hpp"

namespace cpr {

/// A scored point prediction in image pixels.
struct PointPrediction {
  std::int64_t image_id = 0;
  CategoryId category = 0;
  Point2 position;
  double score = 0.0;
};

/// Ground truth for matching: box plus ignore flag.
struct EvalTarget {
  Box box;
  bool ignore = false;
};

enum class Verdict { kTruePositive, kFalsePositive, kIgnored };

struct EvalMatch {
  std::size_t prediction = 0;
  std::optional<std::size_t> gt;
  double distance = 0.0;
  Verdict verdict = Verdict::kFalsePositive;
};

/// sqrt(((x - cx)/w)^2 + ((y - cy)/h)^2); InputError for a zero-size box.
double point_box_distance(Point2 point, const Box& box);

/// Greedy matching for one image and one category. `predictions` must be
/// sorted by descending score. Each prediction takes the unmatched non-ignore
/// GT with the smallest distance below `tau`; failing that, a prediction within
/// `tau` of any ignore GT is ignored; otherwise it is a false positive.
std::vector<EvalMatch> match_image(std::span<const PointPrediction> predictions,
                                   std::span<const EvalTarget> gts, double tau);

struct PRCurve {
  std::vector<double> precision;
  std::vector<double> recall;
  double ap = 0.0;
};

struct ScoredOutcome {
  double score = 0.0;
  bool true_positive = false;
};

/// 101-point interpolated AP from scored TP/FP outcomes (ignored predictions
/// must be removed beforehand). `num_gts` counts non-ignore GTs; zero yields AP 0.
PRCurve average_precision(std::span<const ScoredOutcome> outcomes, std::size_t num_gts);

struct MetricTable {
  std::vector<double> taus;
  std::vector<double> map_tau;   // aligned with taus, in [0, 1]
  double map_small = -1.0;       // at tau = 1.0; -1 when no category has GTs in the bin
  double map_medium = -1.0;
  double map_large = -1.0;
  /// Per category AP at each tau (row = category); -1 for skipped categories.
  std::vector<std::vector<double>> per_category;
};

/// mAP over categories for each tau plus scale-binned mAP at tau = 1.0.
/// Categories without GTs are skipped from the mean with a warning. For a
/// scale bin, GTs outside the bin are treated as ignore regions.
MetricTable map_report(std::span<const PointPrediction> predictions, const Dataset& gt,
                       std::span<const double> taus = std::vector<double>{0.5, 1.0, 2.0});

std::string format_metric_table(const MetricTable& table);
std::string metric_table_json(const MetricTable& table);

}  // namespace cpr
