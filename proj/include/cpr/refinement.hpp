#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/features.hpp"
#include "cpr/refiner.hpp"
#include "cpr/sampling.hpp"

namespace cpr {

/// B+ and S+ of one object; the annotated point always comes first.
struct SemanticPointSet {
  std::int64_t object_id = 0;
  std::vector<Point2> points;
  std::vector<double> scores;
};

struct CprInferOptions {
  double delta1 = 0.1;
  double delta2 = 0.5;
  /// Constraint III against annotations of every category rather than the
  /// object's own category.
  bool nearest_any_category = false;
};

/// Semantic-point selection. A bag point p with score s on the object's
/// category survives when s > delta1, s > delta2 * S_a, the category is an
/// argmax of S_p (ties kept), and a_j is the nearest annotation to p (ties kept).
std::vector<SemanticPointSet> cpr_infer(const FeatureMap& features, const StageHeads& heads,
                                        std::span<const RefineObject> objects,
                                        std::span<const SamplingRegion> regions,
                                        const SamplingLayout& layout, const CprInferOptions& options);

/// Score-weighted mean of the semantic points.
Point2 refined_point(std::span<const Point2> points, std::span<const double> scores);

/// Center = refined_point; radius = floor(sqrt(area of the min bounding box)), at least 1.
SamplingRegion estimate_region(const SemanticPointSet& set);

enum class CascadeMode {
  kCascadeII,  // center and radius both re-estimated per stage
  kCascadeI,   // center re-estimated, radius fixed at r_init
  kSingle,     // one stage
};

struct CascadeConfig {
  int stages = 3;
  int r_init = 8;
  CascadeMode mode = CascadeMode::kCascadeII;
  SamplingLayout layout;
  CprLossOptions loss;
  CprInferOptions infer;
  bool use_var = true;
  VarReduction var_reduction = VarReduction::kSum;
  double var_weight = 1.0;
  /// Decay length of the variance target; <= 0 uses each object's radius at the final stage.
  double var_sigma = 0.0;

  /// Effective number of stages (single mode forces one).
  int effective_stages() const { return mode == CascadeMode::kSingle ? 1 : stages; }
};

/// Regions (and semantic sets) visited by the cascade for one image.
struct CascadeTrace {
  std::vector<std::vector<SamplingRegion>> regions;  // stage k regions, k = 0..K (K+1 entries)
  std::vector<std::vector<SemanticPointSet>> semantic;  // semantic sets of stage k, k = 0..K-1
};

/// Stage-1 regions: annotated points with radius r_init.
std::vector<SamplingRegion> initial_regions(std::span<const RefineObject> objects, int r_init);

/// Next-stage regions from semantic sets under a cascade mode.
std::vector<SamplingRegion> next_regions(std::span<const SemanticPointSet> semantic, CascadeMode mode, int r_init);

/// Runs cpr_infer / estimate_region K times from (A, r_init).
CascadeTrace run_cascade(const FeatureMap& features, const RefinerHeads& heads,
                         std::span<const RefineObject> objects, const CascadeConfig& config);

struct CascadeLoss {
  std::vector<CprLossTerms> stages;
  double var = 0.0;
  double total = 0.0;
};

/// Sum of per-stage L_cpr, plus L_var on the final stage when K > 1 and
/// enabled. Regions of later stages come from detached inference with the
/// current heads. With `backward`, head gradients accumulate and dL/dF is
/// added into `grad_features` when non-null.
CascadeLoss cprpp_training_loss(const FeatureMap& features, RefinerHeads& heads,
                                std::span<const RefineObject> objects, const CascadeConfig& config,
                                bool backward, Tensor3<double>* grad_features);

/// Standalone single-stage CPR loss at a fixed radius (no cascade machinery).
CprLossTerms cpr_training_loss(const FeatureMap& features, StageHeads& heads,
                               std::span<const RefineObject> objects, int radius,
                               const SamplingLayout& layout, const CprLossOptions& options, bool backward,
                               Tensor3<double>* grad_features);

/// Standalone CPR refinement: one round of cpr_infer at a fixed radius, then
/// the weighted mean. Returns feature-map coordinates.
std::vector<Point2> cpr_refine(const FeatureMap& features, const StageHeads& heads,
                               std::span<const RefineObject> objects, int radius,
                               const SamplingLayout& layout, const CprInferOptions& options);

/// Objects of one image in feature coordinates; annotated points are clamped
/// into the map. Ignored objects and objects without a coarse point are skipped.
std::vector<RefineObject> refine_objects(const ImageRecord& image, int stride, MapExtent extent);

/// CPR++ refinement of one image: final centers scaled back to image pixels,
/// plus the per-object center and radius trace.
std::vector<RefinedPoint> cprpp_infer_image(const FeatureMap& features, const RefinerHeads& heads,
                                            const ImageRecord& image, const CascadeConfig& config);

}  // namespace cpr
