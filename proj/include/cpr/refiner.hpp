#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpr/features.hpp"
#include "cpr/params.hpp"
#include "cpr/sampling.hpp"
#include "cpr/types.hpp"

namespace cpr {

/// y = W^T x + b with W stored [in][out].
struct LinearHead {
  int in = 0;
  int out = 0;
  Parameter<double> weight;
  Parameter<double> bias;

  LinearHead() = default;
  LinearHead(const std::string& name, int in_dim, int out_dim);

  void forward(std::span<const double> x, std::span<double> y) const;
  /// Accumulates dW, db and, when `dx` is non-empty, adds W dy into dx.
  void backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);
};

/// fc_cls and fc_ins for one cascade stage.
struct StageHeads {
  LinearHead cls;
  LinearHead ins;
};

/// Per-stage CPR heads plus the 1x1 variance head, all over a shared feature map.
class RefinerHeads {
 public:
  RefinerHeads() = default;
  /// Xavier init; cls and var biases start at the focal prior log(p/(1-p)).
  RefinerHeads(int feature_dim, int num_categories, int num_stages, std::uint64_t seed,
               double prior = 0.01);

  int feature_dim() const { return feature_dim_; }
  int num_categories() const { return num_categories_; }
  int num_stages() const { return static_cast<int>(stages_.size()); }

  StageHeads& stage(int k) { return stages_.at(k); }
  const StageHeads& stage(int k) const { return stages_.at(k); }
  LinearHead& var() { return var_; }
  const LinearHead& var() const { return var_; }

  std::vector<Parameter<double>*> parameters();
  std::vector<const Parameter<double>*> parameters() const;

 private:
  int feature_dim_ = 0;
  int num_categories_ = 0;
  std::vector<StageHeads> stages_;
  LinearHead var_;
};

/// Scores of one bag; all per-point arrays are (|bag| x K) row-major.
struct BagScores {
  int n = 0;
  int k = 0;
  std::vector<double> features;  // (|bag| x d) gathered features
  std::vector<double> s_cls;
  std::vector<double> s_ins;
  std::vector<double> s_over;
  std::vector<double> s_bag;  // K

  double cls(int p, int c) const { return s_cls[static_cast<std::size_t>(p) * k + c]; }
  double ins(int p, int c) const { return s_ins[static_cast<std::size_t>(p) * k + c]; }
  double over(int p, int c) const { return s_over[static_cast<std::size_t>(p) * k + c]; }
};

BagScores bag_forward(const FeatureMap& features, std::span<const Point2> bag, const StageHeads& heads);

struct LossWeights {
  double alpha_ann = 0.5;
  double alpha_neg = 3.0;
  double gamma = 2.0;
};

inline constexpr double kScoreEps = 1e-6;

double sigmoid(double x);

/// Standard (nonnegative) focal term on a probability clamped to
/// [eps, 1 - eps]: -(1-s)^g log s for positives, -s^g log(1-s) otherwise.
double focal_term(double s, bool positive, double gamma);
/// d focal_term / ds; zero where the clamp is active.
double focal_term_grad(double s, bool positive, double gamma);
/// Sum of focal terms over categories against a one-hot label.
double focal_loss(std::span<const double> scores, CategoryId label, double gamma);

/// An annotated object for refinement, in feature-map coordinates.
struct RefineObject {
  std::int64_t object_id = 0;
  CategoryId category = 0;
  Point2 annotated;
};

struct CprLossOptions {
  LossWeights weights;
  /// Divide L_neg by the number of negative points instead of the object count.
  bool neg_per_point = false;
};

struct CprLossTerms {
  double mil = 0.0;
  double ann = 0.0;
  double neg = 0.0;
  double total = 0.0;
};

/// L_cpr = L_MIL + a_ann L_ann + a_neg L_neg for one image and one stage.
/// `regions` is aligned with `objects`. Negatives are taken for every
/// category, including those without instances in the image.
CprLossTerms cpr_loss(const FeatureMap& features, const StageHeads& heads,
                      std::span<const RefineObject> objects, std::span<const SamplingRegion> regions,
                      const SamplingLayout& layout, const CprLossOptions& options);

/// Same value as cpr_loss; accumulates head gradients and, when non-null,
/// dL/dF into `grad_features`.
CprLossTerms cpr_loss_backward(const FeatureMap& features, StageHeads& heads,
                               std::span<const RefineObject> objects,
                               std::span<const SamplingRegion> regions, const SamplingLayout& layout,
                               const CprLossOptions& options, Tensor3<double>* grad_features);

/// Sigmoid of a linear head evaluated at every cell: (h x w x K).
Tensor3<double> dense_scores(const FeatureMap& features, const LinearHead& head);

struct VarTarget {
  CategoryId category = 0;
  Point2 center;       // feature coordinates
  double sigma = 1.0;  // decay length of exp(-dist / sigma)
};

/// G_var: per category, max over targets of exp(-||p - center|| / sigma).
/// Categories without targets are all zero.
Tensor3<double> variance_supervision(std::span<const VarTarget> targets, MapExtent extent,
                                     int num_categories);

enum class VarReduction { kSum, kMean };

/// Dense binary cross-entropy between probabilities (clamped) and targets.
double loss_var(std::span<const double> scores, std::span<const double> target,
                VarReduction reduction = VarReduction::kSum);

/// L_var from the variance head's logits. Returns the unweighted loss;
/// accumulates `weight` times its gradient into the head and, when non-null,
/// into dL/dF.
double loss_var_backward(const FeatureMap& features, LinearHead& var_head, const Tensor3<double>& target,
                         VarReduction reduction, Tensor3<double>* grad_features, double weight = 1.0);

double loss_var_value(const FeatureMap& features, const LinearHead& var_head, const Tensor3<double>& target,
                      VarReduction reduction);

}  // namespace cpr
