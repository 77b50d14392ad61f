#include "cpr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <tuple>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "cpr/log.hpp"

namespace cpr {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Mask

Mask::Mask(int x0, int y0, int width, int height)
    : x0_(x0), y0_(y0), width_(std::max(width, 0)), height_(std::max(height, 0)),
      bits_(static_cast<std::size_t>(width_) * height_, 0) {}

bool Mask::at(int x, int y) const {
  const int lx = x - x0_;
  const int ly = y - y0_;
  if (lx < 0 || ly < 0 || lx >= width_ || ly >= height_) return false;
  return bits_[static_cast<std::size_t>(ly) * width_ + lx] != 0;
}

void Mask::set(int x, int y, bool on) {
  const int lx = x - x0_;
  const int ly = y - y0_;
  if (lx < 0 || ly < 0 || lx >= width_ || ly >= height_)
    throw PreconditionError(fmt::format("mask pixel ({}, {}) outside window", x, y));
  bits_[static_cast<std::size_t>(ly) * width_ + lx] = on ? 1 : 0;
}

bool Mask::contains(Point2 p) const {
  return at(static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y)));
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::optional<Point2> Mask::centroid() const {
  double sx = 0.0;
  double sy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      if (bits_[static_cast<std::size_t>(y) * width_ + x]) {
        sx += x0_ + x + 0.5;
        sy += y0_ + y + 0.5;
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return Point2{sx / n, sy / n};
}

std::size_t Mask::clip_to(int x0, int y0, int x1, int y1) {
  std::size_t dropped = 0;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      auto& b = bits_[static_cast<std::size_t>(y) * width_ + x];
      const int gx = x0_ + x;
      const int gy = y0_ + y;
      if (b && (gx < x0 || gy < y0 || gx >= x1 || gy >= y1)) {
        b = 0;
        ++dropped;
      }
    }
  }
  return dropped;
}

bool ObjectAnnotation::contains(Point2 p) const {
  if (mask) return mask->contains(p);
  return p.x >= box.x0() && p.x <= box.x1() && p.y >= box.y0() && p.y <= box.y1();
}

const ObjectAnnotation* ImageRecord::find_object(std::int64_t object_id) const {
  for (const auto& o : objects)
    if (o.object_id == object_id) return &o;
  return nullptr;
}

std::size_t Dataset::num_objects() const {
  std::size_t n = 0;
  for (const auto& im : images) n += im.objects.size();
  return n;
}

// ---------------------------------------------------------------------------
// COCO segmentation decoding

namespace {

struct Window {
  int x0, y0, x1, y1;  // half-open pixel window
};

Window box_window(const Box& b, int width, int height) {
  Window w{static_cast<int>(std::floor(b.x0())), static_cast<int>(std::floor(b.y0())),
           static_cast<int>(std::ceil(b.x1())), static_cast<int>(std::ceil(b.y1()))};
  w.x0 = std::clamp(w.x0, 0, width);
  w.y0 = std::clamp(w.y0, 0, height);
  w.x1 = std::clamp(w.x1, 0, width);
  w.y1 = std::clamp(w.y1, 0, height);
  return w;
}

// Compressed COCO RLE string (LEB128-like, 6 bits per char offset by 48).
std::vector<std::uint32_t> decode_rle_string(const std::string& s) {
  std::vector<long long> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    long long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw ParseError("truncated compressed RLE string");
      const long long c = static_cast<long long>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    counts.push_back(x);
  }
  std::vector<std::uint32_t> out;
  out.reserve(counts.size());
  for (long long c : counts) {
    if (c < 0) throw ParseError("negative run in compressed RLE");
    out.push_back(static_cast<std::uint32_t>(c));
  }
  return out;
}

Mask mask_from_rle(const std::vector<std::uint32_t>& counts, int rle_h, int rle_w,
                   const Window& win) {
  Mask m(win.x0, win.y0, win.x1 - win.x0, win.y1 - win.y0);
  const std::size_t total = static_cast<std::size_t>(rle_h) * rle_w;
  std::size_t idx = 0;
  bool on = false;
  for (std::uint32_t run : counts) {
    if (idx + run > total) throw ParseError("RLE counts exceed mask size");
    if (on) {
      for (std::size_t i = idx; i < idx + run; ++i) {
        const int x = static_cast<int>(i / rle_h);  // column-major
        const int y = static_cast<int>(i % rle_h);
        if (x >= win.x0 && x < win.x1 && y >= win.y0 && y < win.y1) m.set(x, y, true);
      }
    }
    idx += run;
    on = !on;
  }
  return m;
}

bool point_in_polygon(const std::vector<double>& poly, double px, double py) {
  bool inside = false;
  const std::size_t n = poly.size() / 2;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[2 * i], yi = poly[2 * i + 1];
    const double xj = poly[2 * j], yj = poly[2 * j + 1];
    if (((yi > py) != (yj > py)) && (px < (xj - xi) * (py - yi) / (yj - yi) + xi)) inside = !inside;
  }
  return inside;
}

Mask mask_from_polygons(const std::vector<std::vector<double>>& polys, const Window& win) {
  Mask m(win.x0, win.y0, win.x1 - win.x0, win.y1 - win.y0);
  for (int y = win.y0; y < win.y1; ++y) {
    for (int x = win.x0; x < win.x1; ++x) {
      for (const auto& poly : polys) {
        if (poly.size() >= 6 && point_in_polygon(poly, x + 0.5, y + 0.5)) {
          m.set(x, y, true);
          break;
        }
      }
    }
  }
  return m;
}

std::vector<std::uint32_t> encode_rle(const Mask& mask, int img_w, int img_h) {
  std::vector<std::uint32_t> counts;
  bool current = false;
  std::uint32_t run = 0;
  for (int x = 0; x < img_w; ++x) {
    for (int y = 0; y < img_h; ++y) {
      const bool v = mask.at(x, y);
      if (v != current) {
        counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return counts;
}

std::string record_name(const json& ann) {
  if (ann.contains("id")) return fmt::format("annotation id {}", ann["id"].dump());
  return "annotation (no id)";
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(fmt::format("{}: missing field \"{}\"", where, key));
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: field \"{}\": {}", where, key, e.what()));
  }
}

Point2 parse_point(const json& j, const std::string& where, const char* key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ParseError(fmt::format("{}: \"{}\" must be [x, y]", where, key));
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Loading

Dataset load_dataset(const std::filesystem::path& path, AnnotationFormat format) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open annotation file {}", path.string()));
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!root.is_object()) throw ParseError(fmt::format("{}: top level must be an object", path.string()));
  if (!root.contains("categories") || !root["categories"].is_array())
    throw SchemaError(fmt::format("{}: missing category table", path.string()));
  if (!root.contains("images") || !root["images"].is_array())
    throw ParseError(fmt::format("{}: missing \"images\" array", path.string()));

  Dataset ds;
  ds.image_root = path.parent_path();
  if (root.contains("image_root") && root["image_root"].is_string()) {
    const std::filesystem::path r = root["image_root"].get<std::string>();
    ds.image_root = r.is_absolute() ? r : (path.parent_path() / r).lexically_normal();
    if (!ds.image_root.has_filename() && ds.image_root.has_parent_path()) ds.image_root = ds.image_root.parent_path();
  }

  // Category table: dense ids in ascending source-id order.
  std::vector<std::tuple<std::int64_t, std::string, std::int64_t>> cats;
  for (const auto& c : root["categories"]) {
    const auto id = get_field<std::int64_t>(c, "id", "category");
    const std::string name = c.contains("name") ? c["name"].get<std::string>() : std::to_string(id);
    const bool keep_source = format == AnnotationFormat::kInternalJson && c.contains("source_id");
    cats.emplace_back(id, name, keep_source ? c["source_id"].get<std::int64_t>() : id);
  }
  std::sort(cats.begin(), cats.end());
  std::map<std::int64_t, CategoryId> cat_index;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const auto& [id, name, source] = cats[i];
    if (cat_index.count(id)) throw SchemaError(fmt::format("duplicate category id {}", id));
    if (format == AnnotationFormat::kInternalJson && id != static_cast<std::int64_t>(i))
      throw SchemaError(fmt::format("category ids must be dense 0..K-1; found id {} at rank {}", id, i));
    cat_index[id] = static_cast<CategoryId>(i);
    ds.categories.push_back({static_cast<CategoryId>(i), name, source});
  }

  std::map<std::int64_t, std::size_t> image_index;
  for (const auto& im : root["images"]) {
    ImageRecord rec;
    rec.image_id = get_field<std::int64_t>(im, "id", "image");
    const std::string where = fmt::format("image id {}", rec.image_id);
    rec.file_name = im.contains("file_name") ? im["file_name"].get<std::string>() : "";
    rec.width = get_field<int>(im, "width", where);
    rec.height = get_field<int>(im, "height", where);
    if (rec.width <= 0 || rec.height <= 0)
      throw SchemaError(fmt::format("{}: non-positive image size", where));
    if (image_index.count(rec.image_id))
      throw SchemaError(fmt::format("duplicate image id {}", rec.image_id));
    image_index[rec.image_id] = ds.images.size();
    ds.images.push_back(std::move(rec));
  }

  const json empty = json::array();
  const json& anns = root.contains("annotations") ? root["annotations"] : empty;
  if (!anns.is_array()) throw ParseError("\"annotations\" must be an array");

  for (const auto& ann : anns) {
    const std::string where = record_name(ann);
    ObjectAnnotation obj;
    obj.object_id = get_field<std::int64_t>(ann, "id", where);
    const auto image_id = get_field<std::int64_t>(ann, "image_id", where);
    const auto it = image_index.find(image_id);
    if (it == image_index.end())
      throw SchemaError(fmt::format("{}: unknown image_id {}", where, image_id));
    ImageRecord& rec = ds.images[it->second];

    const auto src_cat = get_field<std::int64_t>(ann, "category_id", where);
    const auto ct = cat_index.find(src_cat);
    if (ct == cat_index.end())
      throw SchemaError(fmt::format("{}: category_id {} not in category table", where, src_cat));
    obj.category = ct->second;

    const auto bbox = get_field<std::vector<double>>(ann, "bbox", where);
    if (bbox.size() != 4) throw ParseError(fmt::format("{}: bbox must have 4 numbers", where));
    if (!(bbox[2] > 0.0) || !(bbox[3] > 0.0))
      throw SchemaError(fmt::format("{}: bbox width and height must be > 0", where));
    // Clip to the image.
    const double x0 = std::clamp(bbox[0], 0.0, static_cast<double>(rec.width));
    const double y0 = std::clamp(bbox[1], 0.0, static_cast<double>(rec.height));
    const double x1 = std::clamp(bbox[0] + bbox[2], 0.0, static_cast<double>(rec.width));
    const double y1 = std::clamp(bbox[1] + bbox[3], 0.0, static_cast<double>(rec.height));
    if (!(x1 > x0) || !(y1 > y0))
      throw SchemaError(fmt::format("{}: bbox lies outside image {}", where, image_id));
    obj.box = Box::from_corner(x0, y0, x1 - x0, y1 - y0);

    bool ignore = false;
    if (ann.contains("iscrowd")) ignore = ignore || ann["iscrowd"].get<int>() != 0;
    if (ann.contains("ignore")) {
      const auto& ig = ann["ignore"];
      ignore = ignore || (ig.is_boolean() ? ig.get<bool>() : ig.get<int>() != 0);
    }
    obj.ignore = ignore;

    if (ann.contains("segmentation") && !ann["segmentation"].is_null()) {
      const auto& seg = ann["segmentation"];
      const Window win = box_window(obj.box, rec.width, rec.height);
      try {
        if (seg.is_array()) {
          if (!seg.empty()) obj.mask = mask_from_polygons(seg.get<std::vector<std::vector<double>>>(), win);
        } else if (seg.is_object()) {
          const auto size = get_field<std::vector<int>>(seg, "size", where + " segmentation");
          if (size.size() != 2) throw ParseError(fmt::format("{}: RLE size must be [h, w]", where));
          std::vector<std::uint32_t> counts;
          if (seg["counts"].is_string())
            counts = decode_rle_string(seg["counts"].get<std::string>());
          else
            counts = seg["counts"].get<std::vector<std::uint32_t>>();
          obj.mask = mask_from_rle(counts, size[0], size[1], win);
        } else {
          throw ParseError("unsupported segmentation encoding");
        }
      } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", where, e.what()));
      } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: segmentation: {}", where, e.what()));
      }
      if (obj.mask) {
        obj.mask->clip_to(win.x0, win.y0, win.x1, win.y1);
        if (obj.mask->count() == 0) obj.mask.reset();
      }
    }

    if (ann.contains("coarse_point") && !ann["coarse_point"].is_null()) {
      rec.coarse_points.push_back(
          {obj.object_id, obj.category, parse_point(ann["coarse_point"], where, "coarse_point")});
    }
    if (ann.contains("refined_point") && !ann["refined_point"].is_null()) {
      RefinedPoint rp;
      rp.object_id = obj.object_id;
      rp.category = obj.category;
      rp.position = parse_point(ann["refined_point"], where, "refined_point");
      if (ann.contains("refine_trace")) {
        const auto& tr = ann["refine_trace"];
        rp.stages = tr.value("stages", 0);
        if (tr.contains("radii")) rp.radii = tr["radii"].get<std::vector<int>>();
        if (tr.contains("centers"))
          for (const auto& c : tr["centers"]) rp.centers.push_back(parse_point(c, where, "centers"));
      }
      rec.refined_points.push_back(std::move(rp));
    }
    rec.objects.push_back(std::move(obj));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Saving

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ordered_json root;
  root["images"] = ordered_json::array();
  root["annotations"] = ordered_json::array();
  root["categories"] = ordered_json::array();
  for (const auto& c : ds.categories)
    root["categories"].push_back({{"id", c.id}, {"name", c.name}, {"source_id", c.source_id}});
  if (!ds.image_root.empty()) {
    const auto base = std::filesystem::absolute(path).parent_path();
    root["image_root"] = std::filesystem::absolute(ds.image_root).lexically_relative(base).generic_string();
  }

  for (const auto& im : ds.images) {
    root["images"].push_back(
        {{"id", im.image_id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
    for (const auto& o : im.objects) {
      ordered_json a;
      a["id"] = o.object_id;
      a["image_id"] = im.image_id;
      a["category_id"] = o.category;
      a["bbox"] = {o.box.x0(), o.box.y0(), o.box.w, o.box.h};
      a["area"] = o.box.area();
      a["iscrowd"] = 0;
      a["ignore"] = o.ignore;
      if (o.mask) {
        a["segmentation"] = {{"counts", encode_rle(*o.mask, im.width, im.height)},
                             {"size", {im.height, im.width}}};
      }
      for (const auto& cp : im.coarse_points)
        if (cp.object_id == o.object_id) a["coarse_point"] = {cp.position.x, cp.position.y};
      for (const auto& rp : im.refined_points) {
        if (rp.object_id != o.object_id) continue;
        a["refined_point"] = {rp.position.x, rp.position.y};
        ordered_json tr;
        tr["stages"] = rp.stages;
        tr["radii"] = rp.radii;
        tr["centers"] = ordered_json::array();
        for (const auto& c : rp.centers) tr["centers"].push_back({c.x, c.y});
        a["refine_trace"] = tr;
      }
      root["annotations"].push_back(std::move(a));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << root.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Coarse-point generation

CoarsePoint generate_coarse_point(const ObjectAnnotation& obj, std::mt19937_64& rng, double sigma) {
  if (!(obj.box.w > 0.0) || !(obj.box.h > 0.0))
    throw InputError(fmt::format("object {}: degenerate box", obj.object_id));
  if (!(sigma > 0.0)) throw InputError("sigma must be > 0");

  std::normal_distribution<double> gauss(0.0, sigma);
  constexpr int kMaxRejections = 10000;
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const double u = gauss(rng);
    const double v = gauss(rng);
    const Point2 p{obj.box.cx + u * obj.box.w, obj.box.cy + v * obj.box.h};
    if (obj.contains(p)) return {obj.object_id, obj.category, p};
  }
  Point2 fallback = obj.box.center();
  if (obj.mask) {
    if (auto c = obj.mask->centroid()) fallback = *c;
  }
  log_warning(fmt::format("object {}: rectified-Gaussian rejection failed {} times, using mask centroid",
                          obj.object_id, kMaxRejections));
  return {obj.object_id, obj.category, fallback};
}

std::uint64_t object_seed(std::uint64_t seed, std::int64_t image_id, std::int64_t object_id) {
  // splitmix64 finalizer over a simple combination.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ static_cast<std::uint64_t>(image_id)) ^ static_cast<std::uint64_t>(object_id));
}

void generate_coarse_points(Dataset& ds, std::uint64_t seed, double sigma) {
  for (auto& im : ds.images) {
    im.coarse_points.clear();
    for (const auto& o : im.objects) {
      if (o.ignore) continue;
      std::mt19937_64 rng(object_seed(seed, im.image_id, o.object_id));
      im.coarse_points.push_back(generate_coarse_point(o, rng, sigma));
    }
  }
}

ScaleBin scale_bin(const Box& box) {
  const double area = box.area();
  if (area < 32.0 * 32.0) return ScaleBin::kSmall;
  if (area < 96.0 * 96.0) return ScaleBin::kMedium;
  return ScaleBin::kLarge;
}

const char* to_string(ScaleBin bin) {
  switch (bin) {
    case ScaleBin::kSmall: return "small";
    case ScaleBin::kMedium: return "medium";
    case ScaleBin::kLarge: return "large";
  }
  return "?";
}

}  // namespace cpr
