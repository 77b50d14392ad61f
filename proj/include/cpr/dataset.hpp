#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cpr/types.hpp"

namespace cpr {

/// Binary object mask at image resolution, stored cropped to a window.
/// Pixel (x, y) covers [x, x+1) x [y, y+1) in image coordinates.
class Mask {
 public:
  Mask() = default;
  Mask(int x0, int y0, int width, int height);

  int x0() const { return x0_; }
  int y0() const { return y0_; }
  int width() const { return width_; }
  int height() const { return height_; }

  bool at(int x, int y) const;
  void set(int x, int y, bool on);
  /// Mask value at a real-valued image point.
  bool contains(Point2 p) const;
  std::size_t count() const;
  /// Centroid of mask-on pixel centers; nullopt for an empty mask.
  std::optional<Point2> centroid() const;
  /// Drops every pixel outside [x0,x1) x [y0,y1); returns how many were dropped.
  std::size_t clip_to(int x0, int y0, int x1, int y1);

 private:
  int x0_ = 0;
  int y0_ = 0;
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct ObjectAnnotation {
  std::int64_t object_id = 0;
  CategoryId category = 0;
  Box box;
  std::optional<Mask> mask;
  bool ignore = false;

  /// Mask(p) of the annotation model: the mask when present, else the box.
  bool contains(Point2 p) const;
};

struct CoarsePoint {
  std::int64_t object_id = 0;
  CategoryId category = 0;
  Point2 position;
};

/// A refined annotation plus its cascade trace (feature-map units).
struct RefinedPoint {
  std::int64_t object_id = 0;
  CategoryId category = 0;
  Point2 position;
  int stages = 0;
  std::vector<Point2> centers;
  std::vector<int> radii;
};

struct ImageRecord {
  std::int64_t image_id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<ObjectAnnotation> objects;
  std::vector<CoarsePoint> coarse_points;
  std::vector<RefinedPoint> refined_points;

  const ObjectAnnotation* find_object(std::int64_t object_id) const;
};

struct Category {
  CategoryId id = 0;
  std::string name;
  std::int64_t source_id = 0;  // id in the originating file (COCO ids are sparse)
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<Category> categories;
  /// Directory that image file names are relative to.
  std::filesystem::path image_root;

  int num_categories() const { return static_cast<int>(categories.size()); }
  std::size_t num_objects() const;
};

enum class AnnotationFormat { kCocoJson, kInternalJson };

/// Loads a dataset and validates its invariants. Boxes are clipped to the
/// image and masks to their box.
Dataset load_dataset(const std::filesystem::path& path, AnnotationFormat format);

/// Writes the internal schema: COCO instances plus optional per-annotation
/// "coarse_point" / "refined_point" / "refine_trace" fields.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Draws a simulated annotator click: per-axis Gaussian in box-normalized
/// offsets (u = (x - cx) / w, v = (y - cy) / h) with standard deviation
/// `sigma`, truncated to Mask(p) by rejection. After 10,000 consecutive
/// rejections falls back to the mask centroid and logs a warning.
CoarsePoint generate_coarse_point(const ObjectAnnotation& obj, std::mt19937_64& rng,
                                  double sigma = 0.25);

/// Per-object seed derived from a run seed; keeps generation independent of
/// iteration order.
std::uint64_t object_seed(std::uint64_t seed, std::int64_t image_id, std::int64_t object_id);

/// Fills `coarse_points` for every non-ignored object of every image.
void generate_coarse_points(Dataset& dataset, std::uint64_t seed, double sigma = 0.25);

enum class ScaleBin { kSmall, kMedium, kLarge };

/// Left-closed area bins at 32^2 and 96^2; boundary areas go to the upper bin.
ScaleBin scale_bin(const Box& box);
inline ScaleBin scale_bin(const ObjectAnnotation& obj) { return scale_bin(obj.box); }
const char* to_string(ScaleBin bin);

}  // namespace cpr
