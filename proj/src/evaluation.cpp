#include "cpr/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "cpr/log.hpp"

namespace cpr {

double point_box_distance(Point2 point, const Box& box) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw InputError("point_box_distance: zero-size box");
  const double dx = (point.x - box.cx) / box.w;
  const double dy = (point.y - box.cy) / box.h;
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<EvalMatch> match_image(std::span<const PointPrediction> predictions,
                                   std::span<const EvalTarget> gts, double tau) {
  std::vector<EvalMatch> out;
  out.reserve(predictions.size());
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    EvalMatch m;
    m.prediction = i;
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best_gt;
    double best_ignore = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> ignore_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double d = point_box_distance(predictions[i].position, gts[g].box);
      if (!(d < tau)) continue;
      if (gts[g].ignore) {
        if (d < best_ignore) best_ignore = d, ignore_gt = g;
      } else if (!taken[g] && d < best) {
        best = d, best_gt = g;
      }
    }
    if (best_gt) {
      taken[*best_gt] = true;
      m.gt = best_gt;
      m.distance = best;
      m.verdict = Verdict::kTruePositive;
    } else if (ignore_gt) {
      m.gt = ignore_gt;
      m.distance = best_ignore;
      m.verdict = Verdict::kIgnored;
    } else {
      m.verdict = Verdict::kFalsePositive;
    }
    out.push_back(m);
  }
  return out;
}

PRCurve average_precision(std::span<const ScoredOutcome> outcomes, std::size_t num_gts) {
  PRCurve curve;
  if (num_gts == 0) return curve;
  std::vector<std::size_t> order(outcomes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return outcomes[a].score > outcomes[b].score;
  });
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (outcomes[order[rank]].true_positive) ++tp;
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gts));
  }
  std::vector<double> envelope = curve.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double threshold = r / 100.0;
    const auto it = std::lower_bound(curve.recall.begin(), curve.recall.end(), threshold);
    if (it != curve.recall.end()) sum += envelope[static_cast<std::size_t>(it - curve.recall.begin())];
  }
  curve.ap = sum / 101.0;
  return curve;
}

namespace {

constexpr int kAllBins = -1;

// AP for one category, one tau, optionally restricted to one scale bin.
double category_ap(const std::map<std::int64_t, std::vector<PointPrediction>>& preds_by_image,
                   const Dataset& gt, CategoryId category, double tau, int bin,
                   std::size_t* num_gts_out) {
  std::vector<ScoredOutcome> outcomes;
  std::size_t num_gts = 0;
  static const std::vector<PointPrediction> kNone;
  for (const auto& im : gt.images) {
    std::vector<EvalTarget> targets;
    for (const auto& o : im.objects) {
      if (o.category != category) continue;
      const bool out_of_bin = bin != kAllBins && static_cast<int>(scale_bin(o)) != bin;
      targets.push_back({o.box, o.ignore || out_of_bin});
      if (!targets.back().ignore) ++num_gts;
    }
    const auto it = preds_by_image.find(im.image_id);
    const auto& all = it == preds_by_image.end() ? kNone : it->second;
    std::vector<PointPrediction> preds;
    for (const auto& p : all)
      if (p.category == category) preds.push_back(p);
    std::stable_sort(preds.begin(), preds.end(),
                     [](const PointPrediction& a, const PointPrediction& b) { return a.score > b.score; });
    const auto matches = match_image(preds, targets, tau);
    for (const auto& m : matches) {
      if (m.verdict == Verdict::kIgnored) continue;
      outcomes.push_back({preds[m.prediction].score, m.verdict == Verdict::kTruePositive});
    }
  }
  *num_gts_out = num_gts;
  if (num_gts == 0) return -1.0;
  return average_precision(outcomes, num_gts).ap;
}

double mean_valid(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v)
    if (x >= 0.0) s += x, ++n;
  return n == 0 ? -1.0 : s / n;
}

}  // namespace

MetricTable map_report(std::span<const PointPrediction> predictions, const Dataset& gt,
                       std::span<const double> taus) {
  std::map<std::int64_t, std::vector<PointPrediction>> by_image;
  for (const auto& p : predictions) by_image[p.image_id].push_back(p);

  MetricTable table;
  table.taus.assign(taus.begin(), taus.end());
  const int K = gt.num_categories();
  table.per_category.assign(static_cast<std::size_t>(K), std::vector<double>(taus.size(), -1.0));

  for (CategoryId k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < taus.size(); ++t) {
      std::size_t n = 0;
      table.per_category[k][t] = category_ap(by_image, gt, k, taus[t], kAllBins, &n);
      if (n == 0 && t == 0)
        log_warning(fmt::format("category {} has no ground truth; skipped in mAP", gt.categories[k].name));
    }
  }
  for (std::size_t t = 0; t < taus.size(); ++t) {
    std::vector<double> col;
    for (CategoryId k = 0; k < K; ++k) col.push_back(table.per_category[k][t]);
    table.map_tau.push_back(mean_valid(col));
  }
  double* bins[3] = {&table.map_small, &table.map_medium, &table.map_large};
  for (int b = 0; b < 3; ++b) {
    std::vector<double> col;
    for (CategoryId k = 0; k < K; ++k) {
      std::size_t n = 0;
      col.push_back(category_ap(by_image, gt, k, 1.0, b, &n));
    }
    *bins[b] = mean_valid(col);
  }
  return table;
}

std::string format_metric_table(const MetricTable& t) {
  auto pct = [](double v) { return v < 0.0 ? std::string("-") : fmt::format("{:.2f}", 100.0 * v); };
  std::string header;
  std::string row;
  for (std::size_t i = 0; i < t.taus.size(); ++i) {
    header += fmt::format("{:>10}", fmt::format("mAP@{:g}", t.taus[i]));
    row += fmt::format("{:>10}", pct(t.map_tau[i]));
  }
  header += fmt::format("{:>10}{:>10}{:>10}", "mAP^s", "mAP^m", "mAP^l");
  row += fmt::format("{:>10}{:>10}{:>10}", pct(t.map_small), pct(t.map_medium), pct(t.map_large));
  return header + "\n" + row + "\n";
}

std::string metric_table_json(const MetricTable& t) {
  nlohmann::ordered_json j;
  j["taus"] = t.taus;
  j["map_tau"] = t.map_tau;
  j["map_small"] = t.map_small;
  j["map_medium"] = t.map_medium;
  j["map_large"] = t.map_large;
  j["per_category"] = t.per_category;
  return j.dump(2);
}

}  // namespace cpr
