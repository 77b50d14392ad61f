#include "cpr/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace cpr {

LinearHead::LinearHead(const std::string& name, int in_dim, int out_dim)
    : in(in_dim),
      out(out_dim),
      weight(name + ".weight", {in_dim, out_dim}),
      bias(name + ".bias", {out_dim}) {}

void LinearHead::forward(std::span<const double> x, std::span<double> y) const {
  for (int o = 0; o < out; ++o) y[o] = bias.value[o];
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* w = weight.value.data() + static_cast<std::size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += xi * w[o];
  }
}

void LinearHead::backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  for (int o = 0; o < out; ++o) bias.grad[o] += dy[o];
  for (int i = 0; i < in; ++i) {
    double* gw = weight.grad.data() + static_cast<std::size_t>(i) * out;
    const double* w = weight.value.data() + static_cast<std::size_t>(i) * out;
    double acc = 0.0;
    for (int o = 0; o < out; ++o) {
      gw[o] += x[i] * dy[o];
      acc += w[o] * dy[o];
    }
    if (!dx.empty()) dx[i] += acc;
  }
}

RefinerHeads::RefinerHeads(int feature_dim, int num_categories, int num_stages, std::uint64_t seed,
                           double prior)
    : feature_dim_(feature_dim), num_categories_(num_categories) {
  if (feature_dim < 1 || num_categories < 1) throw ConfigError("refiner heads need d >= 1 and K_c >= 1");
  if (num_stages < 1) throw ConfigError("number of stages must be at least 1");
  std::mt19937_64 rng(seed);
  const double prior_logit = std::log(prior / (1.0 - prior));
  for (int s = 0; s < num_stages; ++s) {
    StageHeads h{LinearHead(fmt::format("stage{}.cls", s), feature_dim, num_categories),
                 LinearHead(fmt::format("stage{}.ins", s), feature_dim, num_categories)};
    init_xavier(h.cls.weight, feature_dim, num_categories, rng);
    init_xavier(h.ins.weight, feature_dim, num_categories, rng);
    std::fill(h.cls.bias.value.begin(), h.cls.bias.value.end(), prior_logit);
    stages_.push_back(std::move(h));
  }
  var_ = LinearHead("var", feature_dim, num_categories);
  init_xavier(var_.weight, feature_dim, num_categories, rng);
  std::fill(var_.bias.value.begin(), var_.bias.value.end(), prior_logit);
}

std::vector<Parameter<double>*> RefinerHeads::parameters() {
  std::vector<Parameter<double>*> out;
  for (auto& s : stages_)
    for (auto* h : {&s.cls, &s.ins}) {
      out.push_back(&h->weight);
      out.push_back(&h->bias);
    }
  out.push_back(&var_.weight);
  out.push_back(&var_.bias);
  return out;
}

std::vector<const Parameter<double>*> RefinerHeads::parameters() const {
  auto mut = const_cast<RefinerHeads*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double clamp_score(double s) { return std::clamp(s, kScoreEps, 1.0 - kScoreEps); }
bool clamped(double s) { return s < kScoreEps || s > 1.0 - kScoreEps; }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

double focal_term(double s, bool positive, double gamma) {
  s = clamp_score(s);
  if (positive) return -std::pow(1.0 - s, gamma) * std::log(s);
  return -std::pow(s, gamma) * std::log(1.0 - s);
}

double focal_term_grad(double s, bool positive, double gamma) {
  if (clamped(s)) return 0.0;
  if (positive) {
    const double q = 1.0 - s;
    return gamma * std::pow(q, gamma - 1.0) * std::log(s) - std::pow(q, gamma) / s;
  }
  return -gamma * std::pow(s, gamma - 1.0) * std::log(1.0 - s) + std::pow(s, gamma) / (1.0 - s);
}

double focal_loss(std::span<const double> scores, CategoryId label, double gamma) {
  double total = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    total += focal_term(scores[k], static_cast<CategoryId>(k) == label, gamma);
  return total;
}

BagScores bag_forward(const FeatureMap& features, std::span<const Point2> bag, const StageHeads& heads) {
  if (bag.empty()) throw PreconditionError("bag_forward on an empty bag");
  const int d = features.d();
  const int kc = heads.cls.out;
  BagScores b;
  b.n = static_cast<int>(bag.size());
  b.k = kc;
  const std::size_t nk = static_cast<std::size_t>(b.n) * kc;
  b.features.resize(static_cast<std::size_t>(b.n) * d);
  b.s_cls.resize(nk);
  b.s_ins.resize(nk);
  b.s_over.resize(nk);
  b.s_bag.assign(kc, 0.0);
  std::vector<double> ins_logits(nk);
  for (int p = 0; p < b.n; ++p) {
    std::span<double> f(b.features.data() + static_cast<std::size_t>(p) * d, d);
    feature_at(features, bag[p], f);
    std::span<double> zc(b.s_cls.data() + static_cast<std::size_t>(p) * kc, kc);
    heads.cls.forward(f, zc);
    for (auto& z : zc) z = sigmoid(z);
    heads.ins.forward(f, std::span<double>(ins_logits.data() + static_cast<std::size_t>(p) * kc, kc));
  }
  for (int c = 0; c < kc; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int p = 0; p < b.n; ++p) mx = std::max(mx, ins_logits[static_cast<std::size_t>(p) * kc + c]);
    double sum = 0.0;
    for (int p = 0; p < b.n; ++p) {
      const std::size_t i = static_cast<std::size_t>(p) * kc + c;
      b.s_ins[i] = std::exp(ins_logits[i] - mx);
      sum += b.s_ins[i];
    }
    for (int p = 0; p < b.n; ++p) {
      const std::size_t i = static_cast<std::size_t>(p) * kc + c;
      b.s_ins[i] /= sum;
      b.s_over[i] = b.s_ins[i] * b.s_cls[i];
      b.s_bag[c] += b.s_over[i];
    }
  }
  return b;
}

namespace {

template <bool Backward, typename Heads>
CprLossTerms cpr_loss_impl(const FeatureMap& features, Heads& heads, std::span<const RefineObject> objects,
                           std::span<const SamplingRegion> regions, const SamplingLayout& layout,
                           const CprLossOptions& options, Tensor3<double>* grad_features) {
  if (objects.size() != regions.size()) throw PreconditionError("cpr_loss: objects and regions differ in length");
  const int d = features.d();
  const int kc = heads.cls.out;
  const double gamma = options.weights.gamma;
  const double m = static_cast<double>(std::max<std::size_t>(objects.size(), 1));
  const MapExtent extent = features.extent();
  std::vector<double> dfeat(Backward && grad_features ? d : 0);
  auto dfeat_span = [&]() { return std::span<double>(dfeat); };
  CprLossTerms t;

  // MIL term over each object's bag.
  std::vector<double> g(kc), dz(kc), dt(kc);
  for (std::size_t j = 0; j < objects.size(); ++j) {
    const auto& obj = objects[j];
    const PointBag bag = build_bag(regions[j], obj.category, layout, extent);
    const BagScores b = bag_forward(features, bag.points, heads);
    t.mil += focal_loss(b.s_bag, obj.category, gamma) / m;
    if constexpr (Backward) {
      for (int c = 0; c < kc; ++c) g[c] = focal_term_grad(b.s_bag[c], c == obj.category, gamma) / m;
      // sum_q S_ins[q,c] * dS_ins[q,c] with dS_ins = g_c * S_cls
      std::vector<double> inner(kc, 0.0);
      for (int p = 0; p < b.n; ++p)
        for (int c = 0; c < kc; ++c) inner[c] += b.ins(p, c) * g[c] * b.cls(p, c);
      for (int p = 0; p < b.n; ++p) {
        for (int c = 0; c < kc; ++c) {
          const double sc = b.cls(p, c);
          dz[c] = g[c] * b.ins(p, c) * sc * (1.0 - sc);
          dt[c] = b.ins(p, c) * (g[c] * sc - inner[c]);
        }
        std::span<const double> f(b.features.data() + static_cast<std::size_t>(p) * d, d);
        std::fill(dfeat.begin(), dfeat.end(), 0.0);
        heads.cls.backward(f, dz, dfeat_span());
        heads.ins.backward(f, dt, dfeat_span());
        if (grad_features) scatter_feature_grad(*grad_features, bag.points[p], dfeat);
      }
    }
  }

  // Annotation term at the original annotated points.
  std::vector<double> f(d), s(kc);
  for (const auto& obj : objects) {
    feature_at(features, obj.annotated, f);
    heads.cls.forward(f, s);
    for (auto& v : s) v = sigmoid(v);
    t.ann += focal_loss(s, obj.category, gamma) / m;
    if constexpr (Backward) {
      const double w = options.weights.alpha_ann / m;
      for (int c = 0; c < kc; ++c) dz[c] = w * focal_term_grad(s[c], c == obj.category, gamma) * s[c] * (1.0 - s[c]);
      std::fill(dfeat.begin(), dfeat.end(), 0.0);
      heads.cls.backward(f, dz, dfeat_span());
      if (grad_features) scatter_feature_grad(*grad_features, obj.annotated, dfeat);
    }
  }

  // Negative term over grid points outside every same-category region.
  const int cells = extent.h * extent.w;
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(cells) * kc, 0);
  for (std::size_t j = 0; j < objects.size(); ++j) {
    const auto& r = regions[j];
    const int c = objects[j].category;
    const int reach = static_cast<int>(std::ceil(r.radius * std::max(std::sqrt(layout.aspect), 1.0 / std::sqrt(layout.aspect)))) + 1;
    const int y0 = std::max(0, static_cast<int>(std::floor(r.center.y)) - reach);
    const int y1 = std::min(extent.h - 1, static_cast<int>(std::ceil(r.center.y)) + reach);
    const int x0 = std::max(0, static_cast<int>(std::floor(r.center.x)) - reach);
    const int x1 = std::min(extent.w - 1, static_cast<int>(std::ceil(r.center.x)) + reach);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (region_contains(r, layout, {static_cast<double>(x), static_cast<double>(y)}))
          inside[static_cast<std::size_t>(y * extent.w + x) * kc + c] = 1;
  }
  std::size_t neg_count = 0;
  for (auto v : inside) neg_count += v ? 0 : 1;
  const double neg_norm = options.neg_per_point ? static_cast<double>(std::max<std::size_t>(neg_count, 1)) : m;
  for (int y = 0; y < extent.h; ++y) {
    for (int x = 0; x < extent.w; ++x) {
      const std::size_t cell = static_cast<std::size_t>(y * extent.w + x);
      const std::span<const double> fc(features.data.pixel(y, x), d);
      heads.cls.forward(fc, s);
      bool any = false;
      for (int c = 0; c < kc; ++c) {
        dz[c] = 0.0;
        if (inside[cell * kc + c]) continue;
        const double sc = sigmoid(s[c]);
        t.neg += focal_term(sc, false, gamma) / neg_norm;
        if constexpr (Backward) {
          dz[c] = options.weights.alpha_neg / neg_norm * focal_term_grad(sc, false, gamma) * sc * (1.0 - sc);
          any = true;
        }
      }
      if constexpr (Backward) {
        if (!any) continue;
        if (grad_features) {
          std::span<double> gf(grad_features->pixel(y, x), d);
          heads.cls.backward(fc, dz, gf);
        } else {
          heads.cls.backward(fc, dz, {});
        }
      }
    }
  }
  t.total = t.mil + options.weights.alpha_ann * t.ann + options.weights.alpha_neg * t.neg;
  return t;
}

}  // namespace

CprLossTerms cpr_loss(const FeatureMap& features, const StageHeads& heads, std::span<const RefineObject> objects,
                      std::span<const SamplingRegion> regions, const SamplingLayout& layout,
                      const CprLossOptions& options) {
  return cpr_loss_impl<false>(features, heads, objects, regions, layout, options, nullptr);
}

CprLossTerms cpr_loss_backward(const FeatureMap& features, StageHeads& heads, std::span<const RefineObject> objects,
                               std::span<const SamplingRegion> regions, const SamplingLayout& layout,
                               const CprLossOptions& options, Tensor3<double>* grad_features) {
  return cpr_loss_impl<true>(features, heads, objects, regions, layout, options, grad_features);
}

Tensor3<double> dense_scores(const FeatureMap& features, const LinearHead& head) {
  Tensor3<double> out(features.h(), features.w(), head.out);
  for (int y = 0; y < features.h(); ++y)
    for (int x = 0; x < features.w(); ++x) {
      std::span<double> o(out.pixel(y, x), head.out);
      head.forward(std::span<const double>(features.data.pixel(y, x), features.d()), o);
      for (auto& v : o) v = sigmoid(v);
    }
  return out;
}

Tensor3<double> variance_supervision(std::span<const VarTarget> targets, MapExtent extent, int num_categories) {
  Tensor3<double> g(extent.h, extent.w, num_categories);
  for (const auto& t : targets) {
    if (t.category < 0 || t.category >= num_categories) throw PreconditionError("variance target category out of range");
    if (!(t.sigma > 0.0)) throw PreconditionError("variance target sigma must be positive");
    for (int y = 0; y < extent.h; ++y)
      for (int x = 0; x < extent.w; ++x) {
        const double v = std::exp(-distance({static_cast<double>(x), static_cast<double>(y)}, t.center) / t.sigma);
        double& cell = g.at(y, x, t.category);
        cell = std::max(cell, v);
      }
  }
  return g;
}

double loss_var(std::span<const double> scores, std::span<const double> target, VarReduction reduction) {
  if (scores.size() != target.size()) throw PreconditionError("loss_var: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = clamp_score(scores[i]);
    total -= target[i] * std::log(s) + (1.0 - target[i]) * std::log(1.0 - s);
  }
  if (reduction == VarReduction::kMean && !scores.empty()) total /= static_cast<double>(scores.size());
  return total;
}

namespace {

template <bool Backward, typename Head>
double loss_var_impl(const FeatureMap& features, Head& head, const Tensor3<double>& target, VarReduction reduction,
                     Tensor3<double>* grad_features, double weight) {
  if (target.h != features.h() || target.w != features.w() || target.c != head.out)
    throw PreconditionError("variance target shape mismatch");
  const int d = features.d();
  const int kc = head.out;
  const double scale = reduction == VarReduction::kMean ? 1.0 / static_cast<double>(target.size()) : 1.0;
  std::vector<double> x(kc), dx(kc);
  double total = 0.0;
  for (int yy = 0; yy < features.h(); ++yy)
    for (int xx = 0; xx < features.w(); ++xx) {
      const std::span<const double> f(features.data.pixel(yy, xx), d);
      head.forward(f, x);
      const double* g = target.pixel(yy, xx);
      for (int c = 0; c < kc; ++c) {
        total += softplus(x[c]) - g[c] * x[c];
        dx[c] = weight * scale * (sigmoid(x[c]) - g[c]);
      }
      if constexpr (Backward) {
        if (grad_features)
          head.backward(f, dx, std::span<double>(grad_features->pixel(yy, xx), d));
        else
          head.backward(f, dx, {});
      }
    }
  return total * scale;
}

}  // namespace

double loss_var_backward(const FeatureMap& features, LinearHead& var_head, const Tensor3<double>& target,
                         VarReduction reduction, Tensor3<double>* grad_features, double weight) {
  return loss_var_impl<true>(features, var_head, target, reduction, grad_features, weight);
}

double loss_var_value(const FeatureMap& features, const LinearHead& var_head, const Tensor3<double>& target,
                      VarReduction reduction) {
  return loss_var_impl<false>(features, var_head, target, reduction, nullptr, 1.0);
}

}  // namespace cpr
