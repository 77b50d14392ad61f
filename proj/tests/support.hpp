#pragma once

// Fixtures and independent reference implementations shared by the unit and
// acceptance suites. Nothing here calls into the code under test except to
// read plain data.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cpr/evaluation.hpp"
#include "cpr/features.hpp"
#include "cpr/localizer.hpp"
#include "cpr/refiner.hpp"
#include "cpr/sampling.hpp"

namespace cpr::testing {

inline FeatureMap random_map(int h, int w, int d, std::mt19937_64& rng, double scale = 1.0, int stride = 8) {
  FeatureMap f;
  f.stride = stride;
  f.data = Tensor3<double>(h, w, d);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : f.data.data) v = n(rng);
  return f;
}

inline void randomize(LinearHead& head, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : head.weight.value) v = n(rng);
  for (auto& v : head.bias.value) v = n(rng);
}

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cpr_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
};

/// Central differences of f with respect to each value in `params`, compared
/// to `analytic`. A component passes when its relative error is below `rel`
/// or both values agree to `abs_floor` (components that are numerically zero).
inline GradCheck check_gradient(const std::function<double()>& f, const std::vector<double*>& params,
                                const std::vector<double>& analytic, double rel = 1e-3, double h = 1e-5,
                                double abs_floor = 1e-9) {
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i];
    const double keep = *p;
    *p = keep + h;
    const double fp = f();
    *p = keep - h;
    const double fm = f();
    *p = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double diff = std::abs(numeric - analytic[i]);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    const double r = scale > 0.0 ? diff / scale : 0.0;
    ++out.checked;
    if (diff > abs_floor) out.worst_rel = std::max(out.worst_rel, r);
    if (diff > abs_floor && r > rel) ++out.failures;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometry oracles

/// Ring point count of a bag after removing points that fall off the map,
/// enumerated with complex rotation rather than separate sin/cos calls.
inline std::size_t bag_size_oracle(Point2 c, int radius, int u0, MapExtent e) {
  std::size_t n = 0;
  for (int r = 1; r <= radius; ++r) {
    const int m = r * u0;
    for (int i = 0; i < m; ++i) {
      const std::complex<double> z = std::polar(static_cast<double>(r), 2.0 * std::numbers::pi * i / m);
      const double x = c.x + z.real(), y = c.y + z.imag();
      if (x >= -1e-9 && y >= -1e-9 && x <= e.w - 1 + 1e-9 && y <= e.h - 1 + 1e-9) ++n;
    }
  }
  return n;
}

/// Grid points whose squared distance to every circular region exceeds r^2.
inline std::vector<Point2> negatives_oracle(const std::vector<SamplingRegion>& regions, MapExtent e) {
  std::vector<Point2> out;
  for (int y = 0; y < e.h; ++y)
    for (int x = 0; x < e.w; ++x) {
      bool outside = true;
      for (const auto& r : regions) {
        const double dx = x - r.center.x, dy = y - r.center.y;
        if (dx * dx + dy * dy <= static_cast<double>(r.radius) * r.radius) outside = false;
      }
      if (outside) out.push_back({static_cast<double>(x), static_cast<double>(y)});
    }
  return out;
}

inline std::vector<double> bilinear_oracle(const FeatureMap& f, Point2 p) {
  const int x0 = static_cast<int>(std::floor(p.x)), y0 = static_cast<int>(std::floor(p.y));
  const int x1 = std::min(x0 + 1, f.w() - 1), y1 = std::min(y0 + 1, f.h() - 1);
  const double ax = p.x - x0, ay = p.y - y0;
  std::vector<double> v(f.d());
  for (int k = 0; k < f.d(); ++k) {
    const double top = f.data.at(y0, x0, k) * (1 - ax) + f.data.at(y0, x1, k) * ax;
    const double bot = f.data.at(y1, x0, k) * (1 - ax) + f.data.at(y1, x1, k) * ax;
    v[k] = top * (1 - ay) + bot * ay;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Loss oracles: naive restatements with no shared helpers.

inline double naive_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double naive_focal(double s, bool pos, double g) {
  s = std::min(std::max(s, 1e-6), 1.0 - 1e-6);
  return pos ? -std::pow(1 - s, g) * std::log(s) : -std::pow(s, g) * std::log(1 - s);
}

inline std::vector<double> naive_logits(const LinearHead& h, const std::vector<double>& x) {
  std::vector<double> y(h.out);
  for (int o = 0; o < h.out; ++o) {
    double acc = h.bias.value[o];
    for (int i = 0; i < h.in; ++i) acc += x[i] * h.weight.value[static_cast<std::size_t>(i) * h.out + o];
    y[o] = acc;
  }
  return y;
}

/// L_cpr for circular layouts, written from the definitions.
inline CprLossTerms naive_cpr_loss(const FeatureMap& F, const StageHeads& heads, const std::vector<RefineObject>& objs,
                                   const std::vector<SamplingRegion>& regions, int u0, const LossWeights& w,
                                   bool neg_per_point = false) {
  const int K = heads.cls.out;
  const double M = std::max<double>(1.0, static_cast<double>(objs.size()));
  CprLossTerms t;
  for (std::size_t j = 0; j < objs.size(); ++j) {
    std::vector<Point2> bag;
    for (int r = 1; r <= regions[j].radius; ++r)
      for (int i = 0; i < r * u0; ++i) {
        const double a = 2.0 * std::numbers::pi * i / (r * u0);
        Point2 p{regions[j].center.x + r * std::cos(a), regions[j].center.y + r * std::sin(a)};
        if (p.x < -1e-9 || p.y < -1e-9 || p.x > F.w() - 1 + 1e-9 || p.y > F.h() - 1 + 1e-9) continue;
        p.x = std::clamp(p.x, 0.0, F.w() - 1.0);
        p.y = std::clamp(p.y, 0.0, F.h() - 1.0);
        bag.push_back(p);
      }
    std::vector<std::vector<double>> cls, ins;
    for (const auto& p : bag) {
      const auto f = bilinear_oracle(F, p);
      auto zc = naive_logits(heads.cls, f);
      for (auto& z : zc) z = naive_sigmoid(z);
      cls.push_back(zc);
      ins.push_back(naive_logits(heads.ins, f));
    }
    for (int c = 0; c < K; ++c) {
      double denom = 0.0;
      for (const auto& v : ins) denom += std::exp(v[c]);
      double sb = 0.0;
      for (std::size_t q = 0; q < bag.size(); ++q) sb += std::exp(ins[q][c]) / denom * cls[q][c];
      t.mil += naive_focal(sb, c == objs[j].category, w.gamma) / M;
    }
    auto s = naive_logits(heads.cls, bilinear_oracle(F, objs[j].annotated));
    for (int c = 0; c < K; ++c) t.ann += naive_focal(naive_sigmoid(s[c]), c == objs[j].category, w.gamma) / M;
  }
  double neg = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < K; ++c) {
    std::vector<SamplingRegion> mine;
    for (std::size_t j = 0; j < objs.size(); ++j)
      if (objs[j].category == c) mine.push_back(regions[j]);
    for (const auto& p : negatives_oracle(mine, F.extent())) {
      std::vector<double> f(F.data.pixel(static_cast<int>(p.y), static_cast<int>(p.x)),
                            F.data.pixel(static_cast<int>(p.y), static_cast<int>(p.x)) + F.d());
      neg += naive_focal(naive_sigmoid(naive_logits(heads.cls, f)[c]), false, w.gamma);
      ++count;
    }
  }
  t.neg = neg / (neg_per_point ? std::max<double>(1.0, static_cast<double>(count)) : M);
  t.total = t.mil + w.alpha_ann * t.ann + w.alpha_neg * t.neg;
  return t;
}

inline double naive_loss_var(const FeatureMap& F, const LinearHead& head, const Tensor3<double>& G, bool mean) {
  double total = 0.0;
  for (int y = 0; y < F.h(); ++y)
    for (int x = 0; x < F.w(); ++x) {
      std::vector<double> f(F.data.pixel(y, x), F.data.pixel(y, x) + F.d());
      const auto z = naive_logits(head, f);
      for (int c = 0; c < head.out; ++c) {
        const double s = naive_sigmoid(z[c]);
        const double g = G.at(y, x, c);
        total -= g * std::log(s) + (1 - g) * std::log(1 - s);
      }
    }
  return mean ? total / static_cast<double>(G.size()) : total;
}

inline LocalizerLossTerms naive_localizer_loss(const LocalizerOutput& out, const TargetAssignment& t,
                                               const LocalizerLossOptions& o) {
  LocalizerLossTerms r;
  const int K = out.cls_logits.c;
  std::size_t npos = 0;
  for (int lab : t.label) npos += lab >= 0 ? 1 : 0;
  const double norm = std::max<double>(1.0, static_cast<double>(npos));
  for (int y = 0; y < out.cls_logits.h; ++y)
    for (int x = 0; x < out.cls_logits.w; ++x) {
      const std::size_t a = static_cast<std::size_t>(y) * out.cls_logits.w + x;
      for (int c = 0; c < K; ++c) {
        const bool pos = t.label[a] == c;
        const double s = naive_sigmoid(out.cls_logits.at(y, x, c));
        r.cls += (pos ? o.alpha : 1.0 - o.alpha) * naive_focal(s, pos, o.gamma);
      }
      if (t.label[a] >= 0) {
        const double e[2] = {out.offsets.at(y, x, 0) - t.target[a].x, out.offsets.at(y, x, 1) - t.target[a].y};
        for (double v : e) r.reg += std::abs(v) < o.beta ? 0.5 * v * v / o.beta : std::abs(v) - 0.5 * o.beta;
      }
    }
  r.cls /= norm;
  r.reg /= norm;
  r.num_positive = npos;
  r.total = r.cls + o.lambda_reg * r.reg;
  return r;
}

// ---------------------------------------------------------------------------
// Localizer and evaluation oracles

/// Square intersection over union written from corner coordinates.
inline double square_iou(Point2 a, Point2 b, double side) {
  const double h = side / 2;
  const double ix = std::max(0.0, std::min(a.x + h, b.x + h) - std::max(a.x - h, b.x - h));
  const double iy = std::max(0.0, std::min(a.y + h, b.y + h) - std::max(a.y - h, b.y - h));
  const double inter = ix * iy;
  return inter / (2 * side * side - inter);
}

/// O(n^2) suppression: a point survives iff no surviving higher-ranked point
/// of its category overlaps it beyond the threshold. Ranking is by score,
/// earlier index first on ties.
inline std::vector<std::size_t> nms_oracle(const std::vector<ScoredPoint>& pts, double side, double thr) {
  std::vector<std::size_t> idx(pts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pts[a].score > pts[b].score; });
  std::vector<bool> alive(pts.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    bool ok = true;
    for (std::size_t q = 0; q < r; ++q)
      if (alive[idx[q]] && pts[idx[q]].category == pts[idx[r]].category &&
          square_iou(pts[idx[q]].position, pts[idx[r]].position, side) > thr)
        ok = false;
    alive[idx[r]] = ok;
    if (ok) kept.push_back(idx[r]);
  }
  return kept;
}

/// Verdicts by exhaustive search: among all injective assignments of
/// predictions to non-ignore GTs within tau, the greedy protocol yields the
/// one that is lexicographically smallest in (distance, gt index) taken in
/// prediction order, with "unmatched" ranked after every match.
inline std::vector<Verdict> matching_oracle(const std::vector<PointPrediction>& preds, const std::vector<EvalTarget>& gts,
                                            double tau) {
  const std::size_t n = preds.size();
  auto dist = [&](std::size_t p, std::size_t g) {
    const auto& b = gts[g].box;
    return std::sqrt(std::pow((preds[p].position.x - b.cx) / b.w, 2) + std::pow((preds[p].position.y - b.cy) / b.h, 2));
  };
  using Key = std::vector<std::pair<double, std::size_t>>;
  const std::pair<double, std::size_t> none{std::numeric_limits<double>::infinity(), SIZE_MAX};
  Key best(n, none);
  bool have = false;
  std::vector<long> best_assign(n, -1), cur(n, -1);
  std::vector<bool> used(gts.size(), false);
  std::function<void(std::size_t)> rec = [&](std::size_t p) {
    if (p == n) {
      Key k(n, none);
      for (std::size_t i = 0; i < n; ++i)
        if (cur[i] >= 0) k[i] = {dist(i, static_cast<std::size_t>(cur[i])), static_cast<std::size_t>(cur[i])};
      if (!have || k < best) {
        best = k;
        best_assign = cur;
        have = true;
      }
      return;
    }
    cur[p] = -1;
    rec(p + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].ignore || !(dist(p, g) < tau)) continue;
      used[g] = true;
      cur[p] = static_cast<long>(g);
      rec(p + 1);
      used[g] = false;
      cur[p] = -1;
    }
  };
  rec(0);
  std::vector<Verdict> v(n, Verdict::kFalsePositive);
  for (std::size_t p = 0; p < n; ++p) {
    if (best_assign[p] >= 0) {
      v[p] = Verdict::kTruePositive;
      continue;
    }
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (gts[g].ignore && dist(p, g) < tau) v[p] = Verdict::kIgnored;
  }
  return v;
}

}  // namespace cpr::testing
