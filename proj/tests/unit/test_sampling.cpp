#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cpr/sampling.hpp"
#include "../support.hpp"

using namespace cpr;
using cpr::testing::bag_size_oracle;
using cpr::testing::negatives_oracle;

TEST_SUITE("sampling") {
  TEST_CASE("ring_count floors and clamps") {
    CHECK(ring_count(0.2) == 1);
    CHECK(ring_count(3.99) == 3);
    CHECK(ring_count(4.0) == 4);
    CHECK(ring_count(-5) == 1);
  }

  TEST_CASE("circle points start at angle zero and step evenly") {
    const auto p = circle_points({0, 0}, 1, 8);
    REQUIRE(p.size() == 8);
    CHECK(p[0].x == doctest::Approx(1.0));
    CHECK(p[0].y == doctest::Approx(0.0));
    CHECK(p[1].x == doctest::Approx(std::sqrt(0.5)));
    CHECK(p[1].y == doctest::Approx(std::sqrt(0.5)));
    const auto q = circle_points({0, 0}, 2, 8);
    REQUIRE(q.size() == 16);
    CHECK(q[0].x == doctest::Approx(2.0));
  }

  TEST_CASE("ring points lie exactly on their ring") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> c(-50, 50);
    std::uniform_int_distribution<int> r(1, 12), u(1, 16);
    for (int t = 0; t < 1000; ++t) {
      const Point2 center{c(rng), c(rng)};
      const int rr = r(rng);
      for (const auto& p : circle_points(center, rr, u(rng))) REQUIRE(std::abs(distance(p, center) - rr) < 1e-9);
    }
  }

  TEST_CASE("bag of radius 8 deep inside the map has u0*r(r+1)/2 points") {
    const auto bag = build_bag({7, {50, 50}, 8}, 0, {}, {100, 100});
    CHECK(bag.points.size() == 288u);
    CHECK(bag.object_id == 7);
  }

  TEST_CASE("bag at the corner keeps nonnegative points only") {
    const auto bag = build_bag({0, {0, 0}, 1}, 0, {}, {10, 10});
    REQUIRE(bag.points.size() == 3u);
    CHECK(bag.points[0].x == doctest::Approx(1.0));
    CHECK(bag.points[1].x == doctest::Approx(std::sqrt(0.5)));
    CHECK(bag.points[2].y == doctest::Approx(1.0));
    for (const auto& p : bag.points) CHECK((p.x >= 0.0 && p.y >= 0.0));
    SamplingLayout four;
    four.u0 = 4;
    CHECK(build_bag({0, {5, 5}, 1}, 0, four, {10, 10}).points.size() == 4u);
  }

  TEST_CASE("bag cardinality matches enumeration on random regions") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 300; ++t) {
      const MapExtent e{std::uniform_int_distribution<int>(4, 30)(rng), std::uniform_int_distribution<int>(4, 30)(rng)};
      const Point2 c{std::uniform_real_distribution<double>(0, e.w - 1)(rng),
                     std::uniform_real_distribution<double>(0, e.h - 1)(rng)};
      const int r = std::uniform_int_distribution<int>(1, 10)(rng);
      SamplingLayout layout;
      layout.u0 = std::uniform_int_distribution<int>(1, 10)(rng);
      const auto bag = build_bag({0, c, r}, 0, layout, e);
      REQUIRE(bag.points.size() == bag_size_oracle(c, r, layout.u0, e));
      REQUIRE(bag.points.size() <= static_cast<std::size_t>(layout.u0 * r * (r + 1) / 2));
    }
  }

  TEST_CASE("bag entirely off the map is an input error") {
    CHECK_THROWS_AS(build_bag({0, {-30, -30}, 2}, 0, {}, {10, 10}), InputError);
    CHECK_THROWS_AS(build_bag({0, {3, 3}, 0}, 0, {}, {10, 10}), PreconditionError);
  }

  TEST_CASE("negatives without regions cover the whole grid") {
    const auto neg = build_negatives(1, {}, {}, {5, 7});
    CHECK(neg.points.size() == 35u);
    CHECK(neg.category == 1);
  }

  TEST_CASE("negatives around one unit region") {
    const std::vector<SamplingRegion> regions{{0, {2, 2}, 1}};
    const auto neg = build_negatives(0, regions, {}, {4, 4});
    CHECK(neg.points.size() == 11u);
    for (const Point2 excluded : {Point2{2, 2}, Point2{1, 2}, Point2{3, 2}, Point2{2, 1}, Point2{2, 3}})
      CHECK(std::find(neg.points.begin(), neg.points.end(), excluded) == neg.points.end());
  }

  TEST_CASE("negatives of overlapping regions equal the brute-force exterior") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
      std::vector<SamplingRegion> regions;
      for (int k = 0; k < 2; ++k)
        regions.push_back({k, {std::uniform_real_distribution<double>(0, 9)(rng), std::uniform_real_distribution<double>(0, 9)(rng)},
                           std::uniform_int_distribution<int>(1, 4)(rng)});
      const auto neg = build_negatives(0, regions, {}, {10, 10});
      REQUIRE(neg.points == negatives_oracle(regions, {10, 10}));
    }
  }

  TEST_CASE("rect points walk the unit square perimeter") {
    const auto p = rect_points({0, 0}, 1, 8, 1.0);
    REQUIRE(p.size() == 8u);
    // Perimeter 8, arc step 1, starting at (1, 0) counter-clockwise.
    const std::vector<Point2> expected{{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(p[i].x == doctest::Approx(expected[i].x));
      CHECK(p[i].y == doctest::Approx(expected[i].y));
    }
  }

  TEST_CASE("rect half extents keep the area of the square") {
    const auto p = rect_points({0, 0}, 1, 64, 2.0);
    double mx = 0, my = 0;
    for (const auto& q : p) mx = std::max(mx, std::abs(q.x)), my = std::max(my, std::abs(q.y));
    CHECK(mx == doctest::Approx(std::sqrt(2.0)));
    CHECK(my == doctest::Approx(1 / std::sqrt(2.0)));
    SamplingLayout rect;
    rect.shape = SamplingShape::kRect;
    CHECK(build_bag({0, {20, 20}, 5}, 0, rect, {40, 40}).points.size() ==
          build_bag({0, {20, 20}, 5}, 0, {}, {40, 40}).points.size());
    CHECK(region_contains({0, {0, 0}, 1}, rect, {0.99, -0.99}));
    CHECK_FALSE(region_contains({0, {0, 0}, 1}, {}, {0.99, -0.99}));
  }
}
