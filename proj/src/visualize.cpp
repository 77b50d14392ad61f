#include "cpr/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "cpr/log.hpp"

namespace cpr {

namespace {

void put(Image& image, int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
  std::copy(c.begin(), c.end(), image.pixel(x, y));
}

Color ramp(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
  return {static_cast<std::uint8_t>(r * 255), static_cast<std::uint8_t>(g * 255), static_cast<std::uint8_t>(b * 255)};
}

Color category_color(int c, int n) {
  const double h = 6.0 * c / std::max(n, 1);
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const auto u = [](double v) { return static_cast<std::uint8_t>(v * 255); };
  switch (i) {
    case 0: return {255, u(f), 0};
    case 1: return {u(1 - f), 255, 0};
    case 2: return {0, 255, u(f)};
    case 3: return {0, u(1 - f), 255};
    case 4: return {u(f), 0, 255};
    default: return {255, 0, u(1 - f)};
  }
}

}  // namespace

void draw_marker(Image& image, Point2 p, int radius, Color color) {
  const int cx = static_cast<int>(std::lround(p.x)), cy = static_cast<int>(std::lround(p.y));
  for (int dy = -radius - 1; dy <= radius + 1; ++dy)
    for (int dx = -radius - 1; dx <= radius + 1; ++dx) {
      const int d2 = dx * dx + dy * dy;
      if (d2 <= radius * radius)
        put(image, cx + dx, cy + dy, color);
      else if (d2 <= (radius + 1) * (radius + 1))
        put(image, cx + dx, cy + dy, {0, 0, 0});
    }
}

void draw_rect(Image& image, double x0, double y0, double x1, double y1, Color color) {
  const int a = static_cast<int>(std::lround(x0)), b = static_cast<int>(std::lround(y0));
  const int c = static_cast<int>(std::lround(x1)), d = static_cast<int>(std::lround(y1));
  for (int x = a; x <= c; ++x) {
    put(image, x, b, color);
    put(image, x, d, color);
  }
  for (int y = b; y <= d; ++y) {
    put(image, a, y, color);
    put(image, c, y, color);
  }
}

Image overlay_heatmap(const Image& image, const Tensor3<double>& scores, int channel, double alpha) {
  Image out = image;
  const double sx = scores.w > 1 ? static_cast<double>(scores.w) / image.width : 0.0;
  const double sy = scores.h > 1 ? static_cast<double>(scores.h) / image.height : 0.0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, scores.w - 1.0);
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, scores.h - 1.0);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, scores.w - 1), y1 = std::min(y0 + 1, scores.h - 1);
      const double ax = fx - x0, ay = fy - y0;
      const double v = (1 - ax) * (1 - ay) * scores.at(y0, x0, channel) + ax * (1 - ay) * scores.at(y0, x1, channel) +
                       (1 - ax) * ay * scores.at(y1, x0, channel) + ax * ay * scores.at(y1, x1, channel);
      const Color c = ramp(v);
      std::uint8_t* px = out.pixel(x, y);
      for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>((1 - alpha) * px[k] + alpha * c[k]);
    }
  return out;
}

Image render_refined(const Image& image, const ImageRecord& record) {
  Image out = image;
  for (const auto& p : record.coarse_points) draw_marker(out, p.position, 2, kGreen);
  for (const auto& p : record.refined_points) draw_marker(out, p.position, 2, kYellow);
  return out;
}

Image render_semantic(const Image& image, const ImageRecord& record, std::span<const SemanticPointSet> semantic,
                      int stride) {
  Image out = image;
  for (const auto& set : semantic) {
    double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
    for (const auto& p : set.points) {
      const Point2 q = p * static_cast<double>(stride);
      x0 = std::min(x0, q.x), y0 = std::min(y0, q.y), x1 = std::max(x1, q.x), y1 = std::max(y1, q.y);
      draw_marker(out, q, 1, kRed);
    }
    if (!set.points.empty()) draw_rect(out, x0, y0, x1, y1, kRed);
  }
  for (const auto& p : record.coarse_points) draw_marker(out, p.position, 2, kGreen);
  for (const auto& p : record.refined_points) draw_marker(out, p.position, 2, kYellow);
  return out;
}

Image render_predictions(const Image& image, std::span<const PointPrediction> predictions, int num_categories) {
  Image out = image;
  std::vector<PointPrediction> sorted(predictions.begin(), predictions.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  for (const auto& p : sorted) {
    Color c = category_color(p.category, num_categories);
    for (auto& v : c) v = static_cast<std::uint8_t>(v * (0.35 + 0.65 * std::clamp(p.score, 0.0, 1.0)));
    draw_marker(out, p.position, 2, c);
  }
  return out;
}

std::vector<std::filesystem::path> visualize(const Dataset& dataset, const std::vector<Image>& images,
                                             const VisualizeRequest& request) {
  std::vector<std::size_t> selected;
  if (request.image_ids.empty()) {
    for (std::size_t i = 0; i < dataset.images.size(); ++i) selected.push_back(i);
  } else {
    for (const auto id : request.image_ids) {
      const auto it = std::find_if(dataset.images.begin(), dataset.images.end(),
                                   [&](const ImageRecord& r) { return r.image_id == id; });
      if (it == dataset.images.end()) {
        log_warning(fmt::format("visualize: unknown image id {}, skipped", id));
        continue;
      }
      selected.push_back(static_cast<std::size_t>(it - dataset.images.begin()));
    }
  }
  std::filesystem::create_directories(request.out_dir);
  std::vector<std::filesystem::path> written;
  for (const std::size_t i : selected) {
    const auto& rec = dataset.images[i];
    const Image& img = images.at(i);
    switch (request.artifact) {
      case VisualArtifact::kRefinedPoints: {
        const auto path = request.out_dir / fmt::format("refined_{}.png", rec.image_id);
        write_image(render_refined(img, rec), path);
        written.push_back(path);
        break;
      }
      case VisualArtifact::kPredictions: {
        if (!request.predictions) throw PreconditionError("visualize: predictions view needs predictions");
        std::vector<PointPrediction> mine;
        for (const auto& p : *request.predictions)
          if (p.image_id == rec.image_id) mine.push_back(p);
        const auto path = request.out_dir / fmt::format("predictions_{}.png", rec.image_id);
        write_image(render_predictions(img, mine, dataset.num_categories()), path);
        written.push_back(path);
        break;
      }
      case VisualArtifact::kHeatmaps: {
        if (!request.refiner || !request.cascade) throw PreconditionError("visualize: heatmaps need a refiner model");
        const auto& model = *request.refiner;
        const FeatureMap f = model.extractor.forward(to_tensor(img));
        const int stages = std::min(request.cascade->effective_stages(), model.heads.num_stages());
        for (int s = 0; s < stages; ++s) {
          const Tensor3<double> scores = dense_scores(f, model.heads.stage(s).cls);
          for (int c = 0; c < scores.c; ++c) {
            const auto path = request.out_dir / fmt::format("heatmap_{}_stage{}_cat{}.png", rec.image_id, s + 1, c);
            write_image(overlay_heatmap(img, scores, c), path);
            written.push_back(path);
          }
        }
        const auto objects = refine_objects(rec, f.stride, f.extent());
        const CascadeTrace trace = run_cascade(f, model.heads, objects, *request.cascade);
        const auto path = request.out_dir / fmt::format("semantic_{}.png", rec.image_id);
        write_image(render_semantic(img, rec, trace.semantic.back(), f.stride), path);
        written.push_back(path);
        break;
      }
    }
  }
  return written;
}

}  // namespace cpr
