#include "cpr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>

#include <fmt/format.h>

namespace cpr {

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

enum class Shape { kEllipse, kRect, kTriangle };

// Inside test at a pixel center, in box-normalized coordinates u, v in [-1/2, 1/2].
bool inside_shape(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::kEllipse: return 4.0 * (u * u + v * v) <= 1.0;
    case Shape::kRect: return std::abs(u) <= 0.5 && std::abs(v) <= 0.5;
    case Shape::kTriangle: {
      // apex at top middle, base along the bottom edge
      const double t = v + 0.5;  // 0 at apex row, 1 at base
      return t >= 0.0 && t <= 1.0 && std::abs(u) <= 0.5 * t;
    }
  }
  return false;
}

struct Placed {
  ObjectAnnotation ann;
  Shape shape;
  Rgb color;
};

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

}  // namespace

std::vector<Category> synth_categories(int count) {
  static const char* kShapeNames[] = {"ellipse", "rect", "triangle"};
  std::vector<Category> cats;
  for (int c = 0; c < count; ++c)
    cats.push_back({c, fmt::format("{}-{}", kShapeNames[c % 3], c), c + 1});
  return cats;
}

SynthSample synth_image(const SynthParams& params, std::mt19937_64& rng, std::int64_t image_id) {
  const int size = params.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SynthSample out;
  out.image = Image(size, size);
  auto& rec = out.record;
  rec.image_id = image_id;
  rec.width = size;
  rec.height = size;

  // Background: base tone, two low-frequency waves, per-pixel grain.
  const Rgb base = hsv_to_rgb(unit(rng) * 360.0, 0.15 + 0.2 * unit(rng), 0.35 + 0.3 * unit(rng));
  const double fx = 0.02 + 0.08 * unit(rng), fy = 0.02 + 0.08 * unit(rng);
  const double ph1 = unit(rng) * 6.28, ph2 = unit(rng) * 6.28;
  std::normal_distribution<double> grain(0.0, 0.03);
  std::vector<Rgb> canvas(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double wave = 0.08 * std::sin(fx * x + ph1) + 0.08 * std::sin(fy * y + ph2);
      Rgb& px = canvas[static_cast<std::size_t>(y) * size + x];
      for (int c = 0; c < 3; ++c) px[c] = base[c] + wave + grain(rng);
    }

  // Clutter: small neutral-ish blobs and strokes that are not objects.
  std::poisson_distribution<int> clutter_count(params.clutter * 12.0);
  const int n_clutter = params.clutter > 0 ? clutter_count(rng) : 0;
  for (int i = 0; i < n_clutter; ++i) {
    const double cx = unit(rng) * size, cy = unit(rng) * size;
    const double r = 1.5 + 3.5 * unit(rng);
    const Rgb col = hsv_to_rgb(unit(rng) * 360.0, 0.3 * unit(rng), 0.2 + 0.6 * unit(rng));
    const double len = unit(rng) < 0.5 ? 0.0 : 6.0 + 14.0 * unit(rng);
    const double ang = unit(rng) * std::numbers::pi;
    for (int y = std::max(0, static_cast<int>(cy - r - len)); y < std::min(size, static_cast<int>(cy + r + len + 1)); ++y)
      for (int x = std::max(0, static_cast<int>(cx - r - len)); x < std::min(size, static_cast<int>(cx + r + len + 1)); ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double along = std::clamp(dx * std::cos(ang) + dy * std::sin(ang), 0.0, len);
        const double ex = dx - along * std::cos(ang), ey = dy - along * std::sin(ang);
        if (ex * ex + ey * ey <= r * r) canvas[static_cast<std::size_t>(y) * size + x] = col;
      }
  }

  // Objects.
  std::uniform_int_distribution<int> count_dist(params.min_objects, params.max_objects);
  const int target = count_dist(rng);
  // Scale bin first (uniform over the bins the size range touches), then a
  // log-uniform size inside it, so every bin is populated.
  std::vector<std::pair<double, double>> bands;
  for (const auto& [lo, hi] : {std::pair{0.0, 32.0}, std::pair{32.0, 96.0}, std::pair{96.0, 1e9}}) {
    const double a = std::max(lo, params.min_size), b = std::min(hi, params.max_size);
    if (a < b || (a == b && bands.empty())) bands.emplace_back(a, b);
  }
  std::uniform_int_distribution<std::size_t> band_dist(0, bands.size() - 1);
  std::vector<std::pair<double, double>> shapes(static_cast<std::size_t>(target));
  for (auto& [s, ar] : shapes) {
    const auto [lo, hi] = bands[band_dist(rng)];
    s = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * unit(rng));
    ar = std::exp(std::log(0.6) + (std::log(1.6) - std::log(0.6)) * unit(rng));
  }
  std::sort(shapes.begin(), shapes.end(), std::greater<>());
  std::vector<Placed> placed;
  for (const auto& [s, ar] : shapes) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int w = std::clamp(static_cast<int>(std::lround(s * std::sqrt(ar))), 4, size);
      const int h = std::clamp(static_cast<int>(std::lround(s / std::sqrt(ar))), 4, size);
      std::uniform_int_distribution<int> xd(0, size - w), yd(0, size - h);
      const Box box = Box::from_corner(xd(rng), yd(rng), w, h);
      const bool clash = std::any_of(placed.begin(), placed.end(), [&](const Placed& p) {
        return box_iou(box, p.ann.box) > 0.2 || (p.ann.box.area() < box.area() * 0.5 && box_iou(box, p.ann.box) > 0.0);
      });
      if (clash) continue;
      Placed p;
      const int cat = std::uniform_int_distribution<int>(0, params.categories - 1)(rng);
      p.ann.object_id = image_id * 100 + static_cast<std::int64_t>(placed.size());
      p.ann.category = cat;
      p.ann.box = box;
      p.shape = static_cast<Shape>(cat % 3);
      const double hue = 360.0 * cat / params.categories + (unit(rng) - 0.5) * 24.0;
      p.color = hsv_to_rgb(hue, 0.65 + 0.3 * unit(rng), 0.7 + 0.3 * unit(rng));
      placed.push_back(std::move(p));
      break;
    }
  }
  // Larger objects first so smaller ones stay fully visible.
  std::stable_sort(placed.begin(), placed.end(),
                   [](const Placed& a, const Placed& b) { return a.ann.box.area() > b.ann.box.area(); });
  std::vector<int> owner(static_cast<std::size_t>(size) * size, -1);
  for (std::size_t k = 0; k < placed.size(); ++k) {
    auto& p = placed[k];
    const Box& b = p.ann.box;
    const int x0 = static_cast<int>(b.x0()), y0 = static_cast<int>(b.y0());
    const int x1 = static_cast<int>(b.x1()), y1 = static_cast<int>(b.y1());
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const double u = (x + 0.5 - b.cx) / b.w, v = (y + 0.5 - b.cy) / b.h;
        if (!inside_shape(p.shape, u, v)) continue;
        const double shade = 0.8 + 0.2 * (1.0 - std::min(1.0, 4.0 * (u * u + v * v)));
        Rgb& px = canvas[static_cast<std::size_t>(y) * size + x];
        for (int c = 0; c < 3; ++c) px[c] = p.color[c] * shade + grain(rng);
        owner[static_cast<std::size_t>(y) * size + x] = static_cast<int>(k);
      }
  }
  for (std::size_t k = 0; k < placed.size(); ++k) {
    auto& p = placed[k];
    const Box& b = p.ann.box;
    const int x0 = static_cast<int>(b.x0()), y0 = static_cast<int>(b.y0());
    Mask m(x0, y0, static_cast<int>(b.w), static_cast<int>(b.h));
    for (int y = y0; y < y0 + static_cast<int>(b.h); ++y)
      for (int x = x0; x < x0 + static_cast<int>(b.w); ++x)
        if (owner[static_cast<std::size_t>(y) * size + x] == static_cast<int>(k)) m.set(x, y, true);
    if (m.count() == 0) continue;
    p.ann.mask = std::move(m);
    rec.objects.push_back(std::move(p.ann));
  }
  std::sort(rec.objects.begin(), rec.objects.end(),
            [](const ObjectAnnotation& a, const ObjectAnnotation& b) { return a.object_id < b.object_id; });

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Rgb& px = canvas[static_cast<std::size_t>(y) * size + x];
      std::uint8_t* o = out.image.pixel(x, y);
      for (int c = 0; c < 3; ++c) o[c] = to_byte(px[c]);
    }
  return out;
}

Dataset synth_dataset(const SynthParams& params, std::uint64_t seed, int count, const std::filesystem::path& dir,
                      const std::string& prefix, std::int64_t first_id) {
  Dataset ds;
  ds.categories = synth_categories(params.categories);
  ds.image_root = dir;
  std::filesystem::create_directories(dir / "images");
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    SynthSample s = synth_image(params, rng, first_id + i);
    s.record.file_name = fmt::format("images/{}_{:06d}.png", prefix, first_id + i);
    write_image(s.image, dir / s.record.file_name);
    ds.images.push_back(std::move(s.record));
  }
  return ds;
}

}  // namespace cpr
