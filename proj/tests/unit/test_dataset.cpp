#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <random>
#include <set>

#include "cpr/dataset.hpp"
#include "cpr/log.hpp"
#include "../support.hpp"

using namespace cpr;

namespace {

const char* kCocoFixture = R"({
  "images": [{"id": 10, "file_name": "a.png", "width": 200, "height": 100},
             {"id": 11, "file_name": "b.png", "width": 64, "height": 64}],
  "categories": [{"id": 9, "name": "kite"}, {"id": 1, "name": "person"}, {"id": 5, "name": "dog"}],
  "annotations": [
    {"id": 1, "image_id": 10, "category_id": 1, "bbox": [10, 10, 30, 40], "iscrowd": 0},
    {"id": 2, "image_id": 10, "category_id": 9, "bbox": [150, 20, 80, 20], "iscrowd": 0},
    {"id": 3, "image_id": 10, "category_id": 5, "bbox": [0, 0, 5, 5], "iscrowd": 1},
    {"id": 4, "image_id": 11, "category_id": 5, "bbox": [4, 4, 20, 20],
     "segmentation": [[4, 4, 24, 4, 4, 24]]},
    {"id": 5, "image_id": 11, "category_id": 1, "bbox": [30, 30, 10, 10], "ignore": 1}
  ]
})";

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Second parser: dense ids by ascending source id, boxes clipped by hand.
struct RefObject {
  std::int64_t id, image;
  int category;
  double cx, cy, w, h;
  bool ignore;
};

std::vector<RefObject> reference_parse(const std::string& text, std::size_t* categories) {
  const auto j = nlohmann::json::parse(text);
  std::set<std::int64_t> ids;
  for (const auto& c : j["categories"]) ids.insert(c["id"].get<std::int64_t>());
  *categories = ids.size();
  std::map<std::int64_t, std::pair<double, double>> sizes;
  for (const auto& im : j["images"]) sizes[im["id"]] = {im["width"].get<double>(), im["height"].get<double>()};
  std::vector<RefObject> out;
  for (const auto& a : j["annotations"]) {
    const auto b = a["bbox"].get<std::vector<double>>();
    const auto [W, H] = sizes[a["image_id"]];
    const double x0 = std::max(0.0, b[0]), y0 = std::max(0.0, b[1]);
    const double x1 = std::min(W, b[0] + b[2]), y1 = std::min(H, b[1] + b[3]);
    const int cat = static_cast<int>(std::distance(ids.begin(), ids.find(a["category_id"].get<std::int64_t>())));
    out.push_back({a["id"], a["image_id"], cat, (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0,
                   a.value("iscrowd", 0) != 0 || a.value("ignore", 0) != 0});
  }
  return out;
}

// Std of N(0, s) truncated to [-a, a], by midpoint quadrature.
double truncated_std(double s, double a) {
  const int n = 200000;
  double z = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = -a + (i + 0.5) * 2 * a / n;
    const double w = std::exp(-0.5 * x * x / (s * s));
    z += w;
    m2 += w * x * x;
  }
  return std::sqrt(m2 / z);
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("minimal file loads one image and one object") {
    testing::TempDir dir("ds");
    write_file(dir.path() / "m.json",
               R"({"images":[{"id":1,"width":10,"height":10}],"categories":[{"id":0,"name":"x"}],)"
               R"("annotations":[{"id":3,"image_id":1,"category_id":0,"bbox":[1,1,4,4]}]})");
    const Dataset d = load_dataset(dir.path() / "m.json", AnnotationFormat::kCocoJson);
    CHECK(d.images.size() == 1u);
    CHECK(d.num_objects() == 1u);
    CHECK(d.images[0].objects[0].box.cx == 3.0);
  }

  TEST_CASE("coco fixture agrees with the reference parser") {
    testing::TempDir dir("ds");
    write_file(dir.path() / "c.json", kCocoFixture);
    const Dataset d = load_dataset(dir.path() / "c.json", AnnotationFormat::kCocoJson);
    std::size_t cats = 0;
    const auto ref = reference_parse(kCocoFixture, &cats);
    REQUIRE(d.num_categories() == static_cast<int>(cats));
    for (int c = 0; c < d.num_categories(); ++c) CHECK(d.categories[c].id == c);
    CHECK(d.categories[0].name == "person");
    CHECK(d.categories[2].source_id == 9);
    REQUIRE(d.num_objects() == ref.size());
    for (const auto& r : ref) {
      const ObjectAnnotation* o = nullptr;
      for (const auto& im : d.images)
        if (im.image_id == r.image) o = im.find_object(r.id);
      REQUIRE(o != nullptr);
      CHECK(o->category == r.category);
      CHECK(o->box.cx == doctest::Approx(r.cx));
      CHECK(o->box.cy == doctest::Approx(r.cy));
      CHECK(o->box.w == doctest::Approx(r.w));
      CHECK(o->box.h == doctest::Approx(r.h));
      CHECK(o->ignore == r.ignore);
    }
    const auto* tri = d.images[1].find_object(4);
    REQUIRE(tri->mask.has_value());
    CHECK(tri->contains({6, 6}));
    CHECK_FALSE(tri->contains({22, 22}));
  }

  TEST_CASE("schema and parse errors") {
    testing::TempDir dir("ds");
    write_file(dir.path() / "w0.json",
               R"({"images":[{"id":1,"width":10,"height":10}],"categories":[{"id":0}],)"
               R"("annotations":[{"id":3,"image_id":1,"category_id":0,"bbox":[1,1,0,4]}]})");
    CHECK_THROWS_AS(load_dataset(dir.path() / "w0.json", AnnotationFormat::kCocoJson), SchemaError);
    write_file(dir.path() / "nc.json", R"({"images":[]})");
    CHECK_THROWS_AS(load_dataset(dir.path() / "nc.json", AnnotationFormat::kCocoJson), SchemaError);
    write_file(dir.path() / "bad.json", R"({"images": [)");
    CHECK_THROWS_AS(load_dataset(dir.path() / "bad.json", AnnotationFormat::kCocoJson), ParseError);
    write_file(dir.path() / "nb.json",
               R"({"images":[{"id":1,"width":10,"height":10}],"categories":[{"id":0}],)"
               R"("annotations":[{"id":77,"image_id":1,"category_id":0}]})");
    try {
      load_dataset(dir.path() / "nb.json", AnnotationFormat::kCocoJson);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("77") != std::string::npos);
    }
  }

  TEST_CASE("internal format round trips coarse and refined points") {
    testing::TempDir dir("ds");
    write_file(dir.path() / "c.json", kCocoFixture);
    Dataset d = load_dataset(dir.path() / "c.json", AnnotationFormat::kCocoJson);
    generate_coarse_points(d, 5);
    d.images[0].refined_points.push_back({1, 0, {20.5, 30.25}, 2, {{1, 2}, {3, 4}}, {3, 5}});
    save_dataset(d, dir.path() / "out" / "d.json");
    const Dataset e = load_dataset(dir.path() / "out" / "d.json", AnnotationFormat::kInternalJson);
    REQUIRE(e.images.size() == d.images.size());
    CHECK(e.image_root == d.image_root);
    for (std::size_t i = 0; i < d.images.size(); ++i) {
      REQUIRE(e.images[i].coarse_points.size() == d.images[i].coarse_points.size());
      for (std::size_t k = 0; k < d.images[i].coarse_points.size(); ++k)
        CHECK(e.images[i].coarse_points[k].position == d.images[i].coarse_points[k].position);
    }
    const auto& rp = e.images[0].refined_points.at(0);
    CHECK(rp.position == Point2{20.5, 30.25});
    CHECK(rp.radii == std::vector<int>{3, 5});
    CHECK(rp.centers.size() == 2u);
    CHECK(e.images[1].find_object(4)->mask->count() == d.images[1].find_object(4)->mask->count());
  }

  TEST_CASE("one coarse point per non-ignored object") {
    testing::TempDir dir("ds");
    write_file(dir.path() / "c.json", kCocoFixture);
    Dataset d = load_dataset(dir.path() / "c.json", AnnotationFormat::kCocoJson);
    generate_coarse_points(d, 1);
    CHECK(d.images[0].coarse_points.size() == 2u);
    CHECK(d.images[1].coarse_points.size() == 1u);
    Dataset again = load_dataset(dir.path() / "c.json", AnnotationFormat::kCocoJson);
    generate_coarse_points(again, 1);
    CHECK(again.images[0].coarse_points[1].position == d.images[0].coarse_points[1].position);
  }

  TEST_CASE("rectified gaussian moments on a maskless 100x50 box") {
    ObjectAnnotation o;
    o.box = {300, 200, 100, 50};
    std::mt19937_64 rng(60);
    const int n = 10000;
    double sx = 0, sy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
      const Point2 p = generate_coarse_point(o, rng).position;
      sx += p.x, sy += p.y, sxx += p.x * p.x, syy += p.y * p.y;
    }
    const double mx = sx / n, my = sy / n;
    CHECK(std::abs(mx - 300) < 1.0);
    CHECK(std::abs(my - 200) < 1.0);
    // The box edge sits at two standard deviations, so truncation shrinks
    // the spread below sigma * size.
    const double k = truncated_std(0.25, 0.5);
    CHECK(k == doctest::Approx(0.2199).epsilon(1e-3));
    CHECK(std::sqrt(sxx / n - mx * mx) == doctest::Approx(100 * k).epsilon(0.05));
    CHECK(std::sqrt(syy / n - my * my) == doctest::Approx(50 * k).epsilon(0.05));
  }

  TEST_CASE("rectified gaussian limits and purity") {
    ObjectAnnotation o;
    o.object_id = 4;
    o.category = 1;
    o.box = {30, 40, 20, 10};
    std::mt19937_64 a(7), b(7);
    const auto pa = generate_coarse_point(o, a), pb = generate_coarse_point(o, b);
    CHECK(pa.position == pb.position);
    CHECK(pa.object_id == 4);
    CHECK(pa.category == 1);
    std::mt19937_64 r(8);
    const Point2 c = generate_coarse_point(o, r, 1e-12).position;
    CHECK(c.x == doctest::Approx(30));
    CHECK(c.y == doctest::Approx(40));
    CHECK_THROWS_AS(generate_coarse_point(o, r, 0.0), InputError);
    CHECK(object_seed(1, 2, 3) == object_seed(1, 2, 3));
    CHECK(object_seed(1, 2, 3) != object_seed(1, 3, 2));
  }

  TEST_CASE("every draw lands inside the mask") {
    ObjectAnnotation o;
    o.box = {20, 20, 20, 20};
    Mask m(10, 10, 20, 20);
    // An annulus leaves the box center outside the mask.
    for (int y = 10; y < 30; ++y)
      for (int x = 10; x < 30; ++x) {
        const double r = std::hypot(x + 0.5 - 20, y + 0.5 - 20);
        m.set(x, y, r > 4 && r < 9.5);
      }
    o.mask = m;
    std::mt19937_64 rng(61);
    for (int i = 0; i < 100000; ++i) REQUIRE(o.contains(generate_coarse_point(o, rng).position));
  }

  TEST_CASE("empty-looking mask falls back to the centroid with a warning") {
    ObjectAnnotation o;
    o.box = {50, 50, 100, 100};
    Mask m(0, 0, 100, 100);
    m.set(99, 99, true);
    o.mask = m;
    int warnings = 0;
    ScopedLogCapture cap([&](LogLevel l, std::string_view) { warnings += l == LogLevel::kWarning; });
    std::mt19937_64 rng(62);
    const Point2 p = generate_coarse_point(o, rng, 0.01).position;
    CHECK(p == Point2{99.5, 99.5});
    CHECK(warnings == 1);
  }

  TEST_CASE("scale bins against the brute-force oracle") {
    CHECK(scale_bin(Box{0, 0, 32, 32}) == ScaleBin::kMedium);
    CHECK(scale_bin(Box{0, 0, 10, 10}) == ScaleBin::kSmall);
    CHECK(scale_bin(Box{0, 0, 100, 100}) == ScaleBin::kLarge);
    CHECK(scale_bin(Box{0, 0, 96, 96}) == ScaleBin::kLarge);
    for (int w = 1; w <= 130; ++w)
      for (int h = 1; h <= 130; h += 3) {
        const int a = w * h;
        const ScaleBin want = a < 1024 ? ScaleBin::kSmall : a < 9216 ? ScaleBin::kMedium : ScaleBin::kLarge;
        REQUIRE(scale_bin(Box{0, 0, double(w), double(h)}) == want);
      }
  }

  TEST_CASE("mask centroid, count and clipping") {
    Mask m(2, 3, 4, 4);
    m.set(2, 3, true);
    m.set(5, 6, true);
    CHECK(m.count() == 2u);
    CHECK(*m.centroid() == Point2{4, 5});
    CHECK(m.contains({2.9, 3.1}));
    CHECK(m.clip_to(0, 0, 4, 4) == 1u);
    CHECK(m.count() == 1u);
    CHECK_FALSE(Mask(0, 0, 2, 2).centroid().has_value());
  }
}
