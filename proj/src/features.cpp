#include "cpr/features.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace cpr {

namespace {

struct Bilinear {
  int x0, y0, x1, y1;
  double fx, fy;
};

Bilinear bilinear_corners(int h, int w, Point2 p) {
  constexpr double kTol = 1e-9;
  if (!(p.x >= -kTol && p.y >= -kTol && p.x <= (w - 1) + kTol && p.y <= (h - 1) + kTol))
    throw PreconditionError(fmt::format("feature lookup ({:.4f}, {:.4f}) outside {}x{} map", p.x, p.y, h, w));
  const double x = std::clamp(p.x, 0.0, static_cast<double>(w - 1));
  const double y = std::clamp(p.y, 0.0, static_cast<double>(h - 1));
  Bilinear b;
  b.x0 = static_cast<int>(std::floor(x));
  b.y0 = static_cast<int>(std::floor(y));
  b.x1 = std::min(b.x0 + 1, w - 1);
  b.y1 = std::min(b.y0 + 1, h - 1);
  b.fx = x - b.x0;
  b.fy = y - b.y0;
  return b;
}

}  // namespace

void feature_at(const FeatureMap& map, Point2 p, std::span<double> out) {
  const auto& t = map.data;
  if (out.size() != static_cast<std::size_t>(t.c)) throw PreconditionError("feature_at: output size");
  const Bilinear b = bilinear_corners(t.h, t.w, p);
  const double w00 = (1 - b.fx) * (1 - b.fy);
  const double w01 = b.fx * (1 - b.fy);
  const double w10 = (1 - b.fx) * b.fy;
  const double w11 = b.fx * b.fy;
  const double* a = t.pixel(b.y0, b.x0);
  const double* bb = t.pixel(b.y0, b.x1);
  const double* c = t.pixel(b.y1, b.x0);
  const double* d = t.pixel(b.y1, b.x1);
  for (int k = 0; k < t.c; ++k) out[k] = w00 * a[k] + w01 * bb[k] + w10 * c[k] + w11 * d[k];
}

void scatter_feature_grad(Tensor3<double>& grad_map, Point2 p, std::span<const double> grad) {
  const Bilinear b = bilinear_corners(grad_map.h, grad_map.w, p);
  const double w00 = (1 - b.fx) * (1 - b.fy);
  const double w01 = b.fx * (1 - b.fy);
  const double w10 = (1 - b.fx) * b.fy;
  const double w11 = b.fx * b.fy;
  double* a = grad_map.pixel(b.y0, b.x0);
  double* bb = grad_map.pixel(b.y0, b.x1);
  double* c = grad_map.pixel(b.y1, b.x0);
  double* d = grad_map.pixel(b.y1, b.x1);
  for (int k = 0; k < grad_map.c; ++k) {
    a[k] += w00 * grad[k];
    bb[k] += w01 * grad[k];
    c[k] += w10 * grad[k];
    d[k] += w11 * grad[k];
  }
}

FeatureExtractor::FeatureExtractor(const ExtractorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.stride != 4 && cfg.stride != 8) throw ConfigError("feature stride must be 4 or 8");
  if (cfg.width < 1 || cfg.tower_depth < 0) throw ConfigError("invalid extractor width/depth");
  std::mt19937_64 rng(seed);
  const int stem = cfg.stride == 8 ? 3 : 2;
  int in_c = 3;
  auto add = [&](int out_c, int stride) {
    Layer l;
    l.in_c = in_c;
    l.out_c = out_c;
    l.stride = stride;
    const int idx = static_cast<int>(layers_.size());
    l.weight = Parameter<float>(fmt::format("extractor.{}.weight", idx), {3, 3, in_c, out_c});
    l.bias = Parameter<float>(fmt::format("extractor.{}.bias", idx), {out_c});
    init_kaiming(l.weight, 9 * in_c, rng);
    layers_.push_back(std::move(l));
    in_c = out_c;
  };
  for (int i = 0; i < stem; ++i) add(i + 1 == stem ? cfg.width : std::min(cfg.width, 16 << i), 2);
  for (int i = 0; i < cfg.tower_depth; ++i) add(cfg.width, 1);
}

FeatureMap FeatureExtractor::forward(const Tensor3<float>& image, Cache* cache) const {
  if (image.h < cfg_.stride || image.w < cfg_.stride)
    throw InputError(fmt::format("image {}x{} smaller than one stride cell ({})", image.w, image.h, cfg_.stride));
  if (image.c != 3) throw InputError("extractor expects a 3-channel image");
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(image);
  }
  Tensor3<float> cur = image;
  for (const auto& l : layers_) {
    ConvShape s{cur.h, cur.w, l.in_c, l.out_c, 3, l.stride, 1};
    Tensor3<float> out(s.out_h(), s.out_w(), l.out_c);
    conv2d_forward<float>(s, cur.data, l.weight.value, l.bias.value, out.data);
    relu_forward<float>(out.data);
    if (cache) cache->activations.push_back(out);
    cur = std::move(out);
  }
  FeatureMap fm;
  fm.stride = cfg_.stride;
  fm.data = Tensor3<double>(cur.h, cur.w, cur.c);
  std::copy(cur.data.begin(), cur.data.end(), fm.data.data.begin());
  return fm;
}

void FeatureExtractor::backward(const Cache& cache, const Tensor3<double>& grad_features) {
  if (cache.activations.size() != layers_.size() + 1) throw PreconditionError("extractor cache mismatch");
  const auto& last = cache.activations.back();
  if (grad_features.h != last.h || grad_features.w != last.w || grad_features.c != last.c)
    throw PreconditionError("feature gradient shape mismatch");
  std::vector<float> grad(grad_features.data.begin(), grad_features.data.end());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    auto& l = layers_[i];
    const auto& in = cache.activations[i];
    const auto& out = cache.activations[i + 1];
    relu_backward<float>(out.data, grad);
    ConvShape s{in.h, in.w, l.in_c, l.out_c, 3, l.stride, 1};
    std::vector<float> grad_in;
    if (i > 0) grad_in.resize(in.size());
    conv2d_backward<float>(s, in.data, l.weight.value, grad, grad_in, l.weight.grad, l.bias.grad);
    grad = std::move(grad_in);
  }
}

std::vector<Parameter<float>*> FeatureExtractor::parameters() {
  std::vector<Parameter<float>*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Parameter<float>*> FeatureExtractor::parameters() const {
  std::vector<const Parameter<float>*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void FeatureExtractor::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

}  // namespace cpr
