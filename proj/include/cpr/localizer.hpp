#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpr/features.hpp"
#include "cpr/refiner.hpp"
#include "cpr/types.hpp"

namespace cpr {

/// A supervision point in image pixels.
struct GtPoint {
  std::int64_t object_id = 0;
  CategoryId category = 0;
  Point2 position;
};

/// One proposal per feature cell, at (x * stride, y * stride) in image pixels.
std::vector<Point2> make_anchors(int h, int w, int stride);

struct TargetAssignment {
  std::vector<int> label;       // per anchor: category, or -1 for background
  std::vector<int> gt;          // per anchor: index into the GT list, or -1
  std::vector<Point2> target;   // per anchor: GT - anchor in pixels (positives only)
  std::size_t num_positive() const;
};

/// Each GT claims its k nearest anchors (ties broken by anchor index). An
/// anchor claimed by several GTs goes to the nearest; equal distances go to the
/// lower object id. Fewer than k anchors assigns all of them with a warning.
TargetAssignment assign_targets(std::span<const Point2> anchors, std::span<const GtPoint> gts, int k);

/// Raw localizer outputs over the anchor grid.
struct LocalizerOutput {
  Tensor3<double> cls_logits;  // (h x w x K)
  Tensor3<double> offsets;     // (h x w x 2), pixels
};

struct LocalizerLossOptions {
  double gamma = 2.0;
  double alpha = 0.25;  // focal class balance for positives; 1 - alpha for negatives
  double lambda_reg = 1.0;
  double beta = 1.0;    // smooth-L1 transition, pixels
};

struct LocalizerLossTerms {
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::size_t num_positive = 0;
};

double smooth_l1(double x, double beta);
double smooth_l1_grad(double x, double beta);

/// Focal classification over every anchor and category plus smooth-L1 on the
/// positives' offsets, both divided by max(1, #positives). When `grad` is
/// non-null it receives dL/d(logits) and dL/d(offsets) (same shapes as `out`).
LocalizerLossTerms localizer_loss(const LocalizerOutput& out, const TargetAssignment& targets,
                                  const LocalizerLossOptions& options, LocalizerOutput* grad = nullptr);

struct ScoredPoint {
  Point2 position;
  CategoryId category = 0;
  double score = 0.0;
};

/// Greedy per-category suppression treating points as squares of side
/// `box_size`; a point is dropped when its IoU with a kept point exceeds
/// `iou_threshold`. Output sorted by descending score (stable).
std::vector<ScoredPoint> point_nms(std::span<const ScoredPoint> points, double box_size, double iou_threshold);

/// IoU of two equal axis-aligned squares centered on the points.
double pseudo_box_iou(Point2 a, Point2 b, double box_size);

struct LocalizerConfig {
  ExtractorConfig extractor;
  int topk = 4;
  LocalizerLossOptions loss;
  double score_threshold = 0.05;
  double nms_box = 16.0;
  double nms_iou = 0.5;
  int max_detections = 100;
};

/// Backbone plus 1x1 classification (K) and offset (2) heads.
class Localizer {
 public:
  struct Cache {
    FeatureExtractor::Cache backbone;
    FeatureMap features;
  };

  Localizer() = default;
  Localizer(const LocalizerConfig& config, int num_categories, std::uint64_t seed);

  const LocalizerConfig& config() const { return config_; }
  LocalizerConfig& config() { return config_; }
  int num_categories() const { return cls_.out; }
  int stride() const { return backbone_.stride(); }

  LocalizerOutput forward(const Tensor3<float>& image, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const LocalizerOutput& grad);

  /// Thresholded, NMS-filtered detections in image pixels (clipped to the image).
  std::vector<ScoredPoint> predict(const Tensor3<float>& image) const;

  FeatureExtractor& backbone() { return backbone_; }
  const FeatureExtractor& backbone() const { return backbone_; }
  LinearHead& cls_head() { return cls_; }
  LinearHead& reg_head() { return reg_; }
  const LinearHead& cls_head() const { return cls_; }
  const LinearHead& reg_head() const { return reg_; }
  std::vector<Parameter<double>*> head_parameters();

 private:
  LocalizerConfig config_;
  FeatureExtractor backbone_;
  LinearHead cls_;
  LinearHead reg_;
};

/// Decodes raw outputs into candidate points above the score threshold.
std::vector<ScoredPoint> decode_proposals(const LocalizerOutput& out, int stride, double score_threshold,
                                          int image_w, int image_h);

}  // namespace cpr
