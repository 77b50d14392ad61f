#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpr/types.hpp"

namespace cpr {

/// Feature-map extent (rows, columns).
struct MapExtent {
  int h = 0;
  int w = 0;
};

/// Sampling center and ring count in feature-map coordinates.
struct SamplingRegion {
  std::int64_t object_id = 0;
  Point2 center;
  int radius = 1;
};

enum class SamplingShape { kCircle, kRect };

/// Bag layout. For rectangles `aspect` is the w:h ratio; half-extents of ring
/// r are (r*sqrt(aspect), r/sqrt(aspect)).
struct SamplingLayout {
  int u0 = 8;
  SamplingShape shape = SamplingShape::kCircle;
  double aspect = 1.0;
};

struct PointBag {
  std::int64_t object_id = 0;
  CategoryId category = 0;
  std::vector<Point2> points;
};

struct NegativeSet {
  CategoryId category = 0;
  std::vector<Point2> points;  // integer grid coordinates
};

/// Floors a real-valued radius to a ring count, minimum 1.
int ring_count(double radius);

/// r*u0 points on the circle of radius r, angles 2*pi*i/(u0*r).
std::vector<Point2> circle_points(Point2 center, int r, int u0);

/// r*u0 points equally spaced by arc length on the rectangle perimeter,
/// starting at (+half_w, 0) and running counter-clockwise.
std::vector<Point2> rect_points(Point2 center, int r, int u0, double aspect);

/// Whether `p` lies inside the sampling region (closed) for the given layout.
bool region_contains(const SamplingRegion& region, const SamplingLayout& layout, Point2 p);

/// Union of rings 1..radius, filtered to [0, w-1] x [0, h-1].
/// Throws InputError when every point falls outside the map.
PointBag build_bag(const SamplingRegion& region, CategoryId category, const SamplingLayout& layout,
                   MapExtent extent);

/// All grid points outside every region of the category (all h*w points when
/// `regions` is empty). Row-major order.
NegativeSet build_negatives(CategoryId category, std::span<const SamplingRegion> regions,
                            const SamplingLayout& layout, MapExtent extent);

}  // namespace cpr
