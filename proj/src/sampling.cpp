#include "cpr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace cpr {

namespace {
// Trig round-off (cos(pi/2) ~ 6e-17) must not push boundary points off the map.
constexpr double kEdgeTolerance = 1e-9;
}  // namespace

int ring_count(double radius) {
  if (!std::isfinite(radius)) return 1;
  return std::max(1, static_cast<int>(std::floor(radius)));
}

std::vector<Point2> circle_points(Point2 center, int r, int u0) {
  const int n = r * u0;
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    pts.push_back({center.x + r * std::cos(theta), center.y + r * std::sin(theta)});
  }
  return pts;
}

std::vector<Point2> rect_points(Point2 center, int r, int u0, double aspect) {
  const int n = r * u0;
  const double hw = r * std::sqrt(aspect);
  const double hh = r / std::sqrt(aspect);
  const double perimeter = 4.0 * (hw + hh);
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(std::max(n, 0)));
  // Segments walked counter-clockwise from (hw, 0).
  const double seg[5] = {hh, 2.0 * hw, 2.0 * hh, 2.0 * hw, hh};
  for (int i = 0; i < n; ++i) {
    double s = perimeter * static_cast<double>(i) / static_cast<double>(n);
    double x = 0.0;
    double y = 0.0;
    if (s < seg[0]) {
      x = hw, y = s;
    } else if ((s -= seg[0]) < seg[1]) {
      x = hw - s, y = hh;
    } else if ((s -= seg[1]) < seg[2]) {
      x = -hw, y = hh - s;
    } else if ((s -= seg[2]) < seg[3]) {
      x = -hw + s, y = -hh;
    } else {
      s -= seg[3];
      x = hw, y = -hh + s;
    }
    pts.push_back({center.x + x, center.y + y});
  }
  return pts;
}

bool region_contains(const SamplingRegion& region, const SamplingLayout& layout, Point2 p) {
  if (layout.shape == SamplingShape::kCircle) return distance(p, region.center) <= region.radius;
  const double hw = region.radius * std::sqrt(layout.aspect);
  const double hh = region.radius / std::sqrt(layout.aspect);
  return std::abs(p.x - region.center.x) <= hw && std::abs(p.y - region.center.y) <= hh;
}

PointBag build_bag(const SamplingRegion& region, CategoryId category, const SamplingLayout& layout,
                   MapExtent extent) {
  if (region.radius < 1) throw PreconditionError("sampling radius must be >= 1");
  if (layout.u0 < 1) throw PreconditionError("u0 must be >= 1");
  PointBag bag;
  bag.object_id = region.object_id;
  bag.category = category;
  const double xmax = extent.w - 1;
  const double ymax = extent.h - 1;
  for (int r = 1; r <= region.radius; ++r) {
    const auto ring = layout.shape == SamplingShape::kCircle
                          ? circle_points(region.center, r, layout.u0)
                          : rect_points(region.center, r, layout.u0, layout.aspect);
    for (Point2 p : ring) {
      if (p.x < -kEdgeTolerance || p.y < -kEdgeTolerance || p.x > xmax + kEdgeTolerance ||
          p.y > ymax + kEdgeTolerance)
        continue;
      p.x = std::clamp(p.x, 0.0, xmax);
      p.y = std::clamp(p.y, 0.0, ymax);
      bag.points.push_back(p);
    }
  }
  if (bag.points.empty())
    throw InputError(fmt::format("object {}: sampling bag empty (center ({:.3f}, {:.3f}) off the map)",
                                 region.object_id, region.center.x, region.center.y));
  return bag;
}

NegativeSet build_negatives(CategoryId category, std::span<const SamplingRegion> regions,
                            const SamplingLayout& layout, MapExtent extent) {
  NegativeSet neg;
  neg.category = category;
  neg.points.reserve(static_cast<std::size_t>(extent.h) * extent.w);
  for (int y = 0; y < extent.h; ++y) {
    for (int x = 0; x < extent.w; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      const bool covered = std::any_of(regions.begin(), regions.end(), [&](const SamplingRegion& r) {
        return region_contains(r, layout, p);
      });
      if (!covered) neg.points.push_back(p);
    }
  }
  return neg;
}

}  // namespace cpr
