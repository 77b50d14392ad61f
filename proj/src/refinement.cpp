#include "cpr/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace cpr {

std::vector<SemanticPointSet> cpr_infer(const FeatureMap& features, const StageHeads& heads,
                                        std::span<const RefineObject> objects,
                                        std::span<const SamplingRegion> regions, const SamplingLayout& layout,
                                        const CprInferOptions& options) {
  if (objects.size() != regions.size()) throw PreconditionError("cpr_infer: objects and regions differ in length");
  const int d = features.d();
  const int kc = heads.cls.out;
  std::vector<double> f(d), s(kc);
  auto scores_at = [&](Point2 p) {
    feature_at(features, p, f);
    heads.cls.forward(f, s);
    for (auto& v : s) v = sigmoid(v);
  };

  std::vector<SemanticPointSet> out;
  out.reserve(objects.size());
  for (std::size_t j = 0; j < objects.size(); ++j) {
    const auto& obj = objects[j];
    const int k = obj.category;
    SemanticPointSet set;
    set.object_id = obj.object_id;
    scores_at(obj.annotated);
    const double s_ann = s[k];
    set.points.push_back(obj.annotated);
    set.scores.push_back(std::max(s_ann, kScoreEps));

    const PointBag bag = build_bag(regions[j], k, layout, features.extent());
    for (const Point2 p : bag.points) {
      scores_at(p);
      const double sp = s[k];
      if (!(sp > options.delta1 && sp > options.delta2 * s_ann)) continue;
      if (*std::max_element(s.begin(), s.end()) > sp) continue;
      const double own = squared_distance(p, obj.annotated);
      bool nearest = true;
      for (std::size_t i = 0; i < objects.size() && nearest; ++i) {
        if (i == j) continue;
        if (!options.nearest_any_category && objects[i].category != k) continue;
        if (squared_distance(p, objects[i].annotated) < own) nearest = false;
      }
      if (!nearest) continue;
      set.points.push_back(p);
      set.scores.push_back(sp);
    }
    out.push_back(std::move(set));
  }
  return out;
}

Point2 refined_point(std::span<const Point2> points, std::span<const double> scores) {
  if (points.empty() || points.size() != scores.size()) throw PreconditionError("refined_point needs matching nonempty inputs");
  double sx = 0.0, sy = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    sx += scores[i] * points[i].x;
    sy += scores[i] * points[i].y;
    sw += scores[i];
  }
  if (!(sw > 0.0)) throw PreconditionError("refined_point needs positive scores");
  return {sx / sw, sy / sw};
}

SamplingRegion estimate_region(const SemanticPointSet& set) {
  SamplingRegion r;
  r.object_id = set.object_id;
  r.center = refined_point(set.points, set.scores);
  double x1 = std::numeric_limits<double>::infinity(), y1 = x1;
  double x2 = -x1, y2 = -x1;
  for (const auto& p : set.points) {
    x1 = std::min(x1, p.x);
    y1 = std::min(y1, p.y);
    x2 = std::max(x2, p.x);
    y2 = std::max(y2, p.y);
  }
  // Slack for rounding in ring coordinates.
  r.radius = std::max(1, static_cast<int>(std::floor(std::sqrt((x2 - x1) * (y2 - y1)) + 1e-9)));
  return r;
}

std::vector<SamplingRegion> initial_regions(std::span<const RefineObject> objects, int r_init) {
  if (r_init < 1) throw ConfigError("initial sampling radius must be >= 1");
  std::vector<SamplingRegion> regions;
  regions.reserve(objects.size());
  for (const auto& o : objects) regions.push_back({o.object_id, o.annotated, r_init});
  return regions;
}

std::vector<SamplingRegion> next_regions(std::span<const SemanticPointSet> semantic, CascadeMode mode, int r_init) {
  std::vector<SamplingRegion> regions;
  regions.reserve(semantic.size());
  for (const auto& set : semantic) {
    SamplingRegion r = estimate_region(set);
    if (mode == CascadeMode::kCascadeI) r.radius = r_init;
    regions.push_back(r);
  }
  return regions;
}

namespace {

void check_stages(const CascadeConfig& config, int available) {
  const int k = config.effective_stages();
  if (k < 1) throw ConfigError("number of cascade stages must be at least 1");
  if (k > available)
    throw ConfigError(fmt::format("cascade needs {} stage heads but the model has {}", k, available));
}

}  // namespace

CascadeTrace run_cascade(const FeatureMap& features, const RefinerHeads& heads,
                         std::span<const RefineObject> objects, const CascadeConfig& config) {
  check_stages(config, heads.num_stages());
  const int k = config.effective_stages();
  CascadeTrace trace;
  trace.regions.push_back(initial_regions(objects, config.r_init));
  for (int s = 0; s < k; ++s) {
    trace.semantic.push_back(
        cpr_infer(features, heads.stage(s), objects, trace.regions.back(), config.layout, config.infer));
    trace.regions.push_back(next_regions(trace.semantic.back(), config.mode, config.r_init));
  }
  return trace;
}

CascadeLoss cprpp_training_loss(const FeatureMap& features, RefinerHeads& heads,
                                std::span<const RefineObject> objects, const CascadeConfig& config,
                                bool backward, Tensor3<double>* grad_features) {
  check_stages(config, heads.num_stages());
  const int k = config.effective_stages();
  CascadeLoss loss;
  std::vector<SamplingRegion> regions = initial_regions(objects, config.r_init);
  for (int s = 0; s < k; ++s) {
    StageHeads& h = heads.stage(s);
    const CprLossTerms t =
        backward ? cpr_loss_backward(features, h, objects, regions, config.layout, config.loss, grad_features)
                 : cpr_loss(features, h, objects, regions, config.layout, config.loss);
    loss.stages.push_back(t);
    loss.total += t.total;
    if (s == k - 1) {
      if (k != 1 && config.use_var && !objects.empty()) {
        std::vector<VarTarget> targets;
        targets.reserve(objects.size());
        for (std::size_t j = 0; j < objects.size(); ++j)
          targets.push_back({objects[j].category, regions[j].center,
                             config.var_sigma > 0.0 ? config.var_sigma : static_cast<double>(regions[j].radius)});
        const Tensor3<double> g = variance_supervision(targets, features.extent(), heads.num_categories());
        loss.var = backward ? loss_var_backward(features, heads.var(), g, config.var_reduction, grad_features,
                                                config.var_weight)
                            : loss_var_value(features, heads.var(), g, config.var_reduction);
        loss.total += config.var_weight * loss.var;
      }
      break;
    }
    const auto semantic = cpr_infer(features, h, objects, regions, config.layout, config.infer);
    regions = next_regions(semantic, config.mode, config.r_init);
  }
  return loss;
}

CprLossTerms cpr_training_loss(const FeatureMap& features, StageHeads& heads, std::span<const RefineObject> objects,
                               int radius, const SamplingLayout& layout, const CprLossOptions& options,
                               bool backward, Tensor3<double>* grad_features) {
  const auto regions = initial_regions(objects, radius);
  return backward ? cpr_loss_backward(features, heads, objects, regions, layout, options, grad_features)
                  : cpr_loss(features, heads, objects, regions, layout, options);
}

std::vector<Point2> cpr_refine(const FeatureMap& features, const StageHeads& heads,
                               std::span<const RefineObject> objects, int radius, const SamplingLayout& layout,
                               const CprInferOptions& options) {
  const auto regions = initial_regions(objects, radius);
  const auto semantic = cpr_infer(features, heads, objects, regions, layout, options);
  std::vector<Point2> out;
  out.reserve(semantic.size());
  for (const auto& set : semantic) out.push_back(refined_point(set.points, set.scores));
  return out;
}

std::vector<RefineObject> refine_objects(const ImageRecord& image, int stride, MapExtent extent) {
  std::vector<RefineObject> out;
  for (const auto& cp : image.coarse_points) {
    const ObjectAnnotation* obj = image.find_object(cp.object_id);
    if (obj && obj->ignore) continue;
    RefineObject r;
    r.object_id = cp.object_id;
    r.category = cp.category;
    r.annotated = {std::clamp(cp.position.x / stride, 0.0, static_cast<double>(extent.w - 1)),
                   std::clamp(cp.position.y / stride, 0.0, static_cast<double>(extent.h - 1))};
    out.push_back(r);
  }
  return out;
}

std::vector<RefinedPoint> cprpp_infer_image(const FeatureMap& features, const RefinerHeads& heads,
                                            const ImageRecord& image, const CascadeConfig& config) {
  const auto objects = refine_objects(image, features.stride, features.extent());
  const CascadeTrace trace = run_cascade(features, heads, objects, config);
  const int k = config.effective_stages();
  std::vector<RefinedPoint> out;
  out.reserve(objects.size());
  for (std::size_t j = 0; j < objects.size(); ++j) {
    RefinedPoint rp;
    rp.object_id = objects[j].object_id;
    rp.category = objects[j].category;
    rp.position = trace.regions[k][j].center * static_cast<double>(features.stride);
    rp.stages = k;
    for (const auto& stage : trace.regions) {
      rp.centers.push_back(stage[j].center);
      rp.radii.push_back(stage[j].radius);
    }
    out.push_back(std::move(rp));
  }
  return out;
}

}  // namespace cpr
