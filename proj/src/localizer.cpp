#include "cpr/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "cpr/log.hpp"

namespace cpr {

std::vector<Point2> make_anchors(int h, int w, int stride) {
  std::vector<Point2> a;
  a.reserve(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) a.push_back({static_cast<double>(x * stride), static_cast<double>(y * stride)});
  return a;
}

std::size_t TargetAssignment::num_positive() const {
  return static_cast<std::size_t>(std::count_if(label.begin(), label.end(), [](int l) { return l >= 0; }));
}

TargetAssignment assign_targets(std::span<const Point2> anchors, std::span<const GtPoint> gts, int k) {
  if (k < 1) throw PreconditionError("top-k assignment needs k >= 1");
  const std::size_t n = anchors.size();
  TargetAssignment t;
  t.label.assign(n, -1);
  t.gt.assign(n, -1);
  t.target.assign(n, Point2{});
  if (n < static_cast<std::size_t>(k) && !gts.empty())
    log_warning(fmt::format("only {} anchors for top-{} assignment; assigning all", n, k));
  const std::size_t take = std::min<std::size_t>(k, n);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> order(n);
  std::vector<double> dist(n);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t a = 0; a < n; ++a) dist[a] = squared_distance(anchors[a], gts[g].position);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t i, std::size_t j) { return dist[i] < dist[j] || (dist[i] == dist[j] && i < j); });
    for (std::size_t r = 0; r < take; ++r) {
      const std::size_t a = order[r];
      const int prev = t.gt[a];
      const bool wins = prev < 0 || dist[a] < best[a] ||
                        (dist[a] == best[a] && gts[g].object_id < gts[static_cast<std::size_t>(prev)].object_id);
      if (!wins) continue;
      best[a] = dist[a];
      t.gt[a] = static_cast<int>(g);
      t.label[a] = gts[g].category;
      t.target[a] = gts[g].position - anchors[a];
    }
  }
  return t;
}

double smooth_l1(double x, double beta) {
  const double ax = std::abs(x);
  return ax < beta ? 0.5 * ax * ax / beta : ax - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0 ? 1.0 : -1.0;
}

LocalizerLossTerms localizer_loss(const LocalizerOutput& out, const TargetAssignment& targets,
                                  const LocalizerLossOptions& options, LocalizerOutput* grad) {
  const auto& logits = out.cls_logits;
  const std::size_t cells = static_cast<std::size_t>(logits.h) * logits.w;
  if (targets.label.size() != cells) throw PreconditionError("localizer_loss: assignment does not match the grid");
  const int kc = logits.c;
  LocalizerLossTerms t;
  t.num_positive = targets.num_positive();
  const double norm = static_cast<double>(std::max<std::size_t>(t.num_positive, 1));
  if (grad) {
    grad->cls_logits = Tensor3<double>(logits.h, logits.w, kc);
    grad->offsets = Tensor3<double>(logits.h, logits.w, 2);
  }
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const int label = targets.label[cell];
    for (int c = 0; c < kc; ++c) {
      const double z = logits.data[cell * kc + c];
      const double s = sigmoid(z);
      const bool pos = c == label;
      const double w = pos ? options.alpha : 1.0 - options.alpha;
      t.cls += w * focal_term(s, pos, options.gamma) / norm;
      if (grad) grad->cls_logits.data[cell * kc + c] = w * focal_term_grad(s, pos, options.gamma) * s * (1.0 - s) / norm;
    }
    if (label < 0) continue;
    const double ex = out.offsets.data[cell * 2] - targets.target[cell].x;
    const double ey = out.offsets.data[cell * 2 + 1] - targets.target[cell].y;
    t.reg += (smooth_l1(ex, options.beta) + smooth_l1(ey, options.beta)) / norm;
    if (grad) {
      grad->offsets.data[cell * 2] = options.lambda_reg * smooth_l1_grad(ex, options.beta) / norm;
      grad->offsets.data[cell * 2 + 1] = options.lambda_reg * smooth_l1_grad(ey, options.beta) / norm;
    }
  }
  t.total = t.cls + options.lambda_reg * t.reg;
  return t;
}

double pseudo_box_iou(Point2 a, Point2 b, double box_size) {
  const double ox = std::max(0.0, box_size - std::abs(a.x - b.x));
  const double oy = std::max(0.0, box_size - std::abs(a.y - b.y));
  const double inter = ox * oy;
  return inter / (2.0 * box_size * box_size - inter);
}

std::vector<ScoredPoint> point_nms(std::span<const ScoredPoint> points, double box_size, double iou_threshold) {
  if (!(box_size > 0.0)) throw PreconditionError("NMS pseudo box size must be positive");
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return points[i].score > points[j].score; });
  std::vector<ScoredPoint> kept;
  for (std::size_t i : order) {
    const auto& p = points[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const ScoredPoint& q) {
      return q.category == p.category && pseudo_box_iou(p.position, q.position, box_size) > iou_threshold;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

Localizer::Localizer(const LocalizerConfig& config, int num_categories, std::uint64_t seed)
    : config_(config),
      backbone_(config.extractor, seed),
      cls_("loc.cls", config.extractor.width, num_categories),
      reg_("loc.reg", config.extractor.width, 2) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  init_xavier(cls_.weight, cls_.in, cls_.out, rng);
  std::fill(cls_.bias.value.begin(), cls_.bias.value.end(), std::log(0.01 / 0.99));
  std::normal_distribution<double> small(0.0, 1e-3);
  for (auto& v : reg_.weight.value) v = small(rng);
}

LocalizerOutput Localizer::forward(const Tensor3<float>& image, Cache* cache) const {
  FeatureMap f = backbone_.forward(image, cache ? &cache->backbone : nullptr);
  LocalizerOutput out;
  out.cls_logits = Tensor3<double>(f.h(), f.w(), cls_.out);
  out.offsets = Tensor3<double>(f.h(), f.w(), 2);
  const double stride = f.stride;
  for (int y = 0; y < f.h(); ++y)
    for (int x = 0; x < f.w(); ++x) {
      const std::span<const double> v(f.data.pixel(y, x), f.d());
      cls_.forward(v, std::span<double>(out.cls_logits.pixel(y, x), cls_.out));
      std::span<double> o(out.offsets.pixel(y, x), 2);
      reg_.forward(v, o);
      o[0] *= stride;
      o[1] *= stride;
    }
  if (cache) cache->features = std::move(f);
  return out;
}

void Localizer::backward(const Cache& cache, const LocalizerOutput& grad) {
  const FeatureMap& f = cache.features;
  Tensor3<double> gf(f.h(), f.w(), f.d());
  const double stride = f.stride;
  double dr[2];
  for (int y = 0; y < f.h(); ++y)
    for (int x = 0; x < f.w(); ++x) {
      const std::span<const double> v(f.data.pixel(y, x), f.d());
      std::span<double> g(gf.pixel(y, x), f.d());
      cls_.backward(v, std::span<const double>(grad.cls_logits.pixel(y, x), cls_.out), g);
      dr[0] = grad.offsets.at(y, x, 0) * stride;
      dr[1] = grad.offsets.at(y, x, 1) * stride;
      reg_.backward(v, dr, g);
    }
  backbone_.backward(cache.backbone, gf);
}

std::vector<ScoredPoint> decode_proposals(const LocalizerOutput& out, int stride, double score_threshold,
                                          int image_w, int image_h) {
  std::vector<ScoredPoint> points;
  const int kc = out.cls_logits.c;
  for (int y = 0; y < out.cls_logits.h; ++y)
    for (int x = 0; x < out.cls_logits.w; ++x) {
      const Point2 p{std::clamp(x * stride + out.offsets.at(y, x, 0), 0.0, static_cast<double>(image_w - 1)),
                     std::clamp(y * stride + out.offsets.at(y, x, 1), 0.0, static_cast<double>(image_h - 1))};
      for (int c = 0; c < kc; ++c) {
        const double s = sigmoid(out.cls_logits.at(y, x, c));
        if (s > score_threshold) points.push_back({p, c, s});
      }
    }
  return points;
}

std::vector<ScoredPoint> Localizer::predict(const Tensor3<float>& image) const {
  const LocalizerOutput out = forward(image);
  const auto candidates = decode_proposals(out, stride(), config_.score_threshold, image.w, image.h);
  auto kept = point_nms(candidates, config_.nms_box, config_.nms_iou);
  if (kept.size() > static_cast<std::size_t>(config_.max_detections)) kept.resize(config_.max_detections);
  return kept;
}

std::vector<Parameter<double>*> Localizer::head_parameters() {
  return {&cls_.weight, &cls_.bias, &reg_.weight, &reg_.bias};
}

}  // namespace cpr
