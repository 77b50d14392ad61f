#include "cpr/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <json.hpp>

#include "cpr/log.hpp"

namespace cpr {

using json = nlohmann::json;

std::vector<Image> load_images(const Dataset& dataset) {
  std::vector<Image> images;
  images.reserve(dataset.images.size());
  for (const auto& rec : dataset.images) {
    Image img = read_image(dataset.image_root / rec.file_name);
    if (img.width != rec.width || img.height != rec.height)
      throw InputError(fmt::format("image {} is {}x{} but annotated as {}x{}", rec.file_name, img.width, img.height,
                                   rec.width, rec.height));
    images.push_back(std::move(img));
  }
  return images;
}

RefinerModel make_refiner(const ExtractorConfig& extractor, const std::vector<Category>& categories, int num_stages,
                          std::uint64_t seed) {
  RefinerModel m;
  m.extractor = FeatureExtractor(extractor, seed);
  m.heads = RefinerHeads(extractor.width, static_cast<int>(categories.size()), num_stages, seed + 1);
  m.categories = categories;
  return m;
}

namespace {

ImageRecord flipped(const ImageRecord& rec) {
  ImageRecord out = rec;
  const double w = rec.width;
  for (auto& o : out.objects) o.box.cx = w - o.box.cx;
  for (auto& p : out.coarse_points) p.position.x = w - p.position.x;
  for (auto& p : out.refined_points) p.position.x = w - p.position.x;
  return out;
}

// Step decay by 10x after three quarters of the epochs.
double scheduled_lr(double base, int epoch, int epochs) { return epoch >= (3 * epochs + 3) / 4 && epochs >= 4 ? base * 0.1 : base; }

template <typename StepFn>
TrainLog run_epochs(std::size_t n, const TrainParams& train, std::uint64_t seed, Adam& adam, const ProgressFn& progress,
                    StepFn&& step) {
  TrainLog log;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution coin(0.5);
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    adam.set_lr(scheduled_lr(train.lr, epoch, train.epochs));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(train.batch)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(train.batch));
      double batch_sum = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const bool flip = train.flip && coin(rng);
        batch_sum += step(order[i], flip);
      }
      const double count = static_cast<double>(end - start);
      adam.step(1.0 / count);
      log.step_loss.push_back(batch_sum / count);
      epoch_sum += batch_sum;
    }
    log.epoch_loss.push_back(n ? epoch_sum / static_cast<double>(n) : 0.0);
    if (progress) progress(epoch, log.epoch_loss.back());
  }
  return log;
}

}  // namespace

TrainLog train_refiner(RefinerModel& model, const Dataset& dataset, const std::vector<Image>& images,
                       const RefinerTrainOptions& options, const ProgressFn& progress) {
  if (images.size() != dataset.images.size()) throw PreconditionError("train_refiner: images do not match dataset");
  Adam adam({options.train.lr, 0.9, 0.999, 1e-8, options.train.weight_decay});
  for (auto* p : model.extractor.parameters()) adam.add(p);
  for (auto* p : model.heads.parameters()) adam.add(p);
  const int stride = model.extractor.stride();
  auto step = [&](std::size_t idx, bool flip) {
    const ImageRecord rec = flip ? flipped(dataset.images[idx]) : dataset.images[idx];
    const Tensor3<float> t = to_tensor(flip ? flip_horizontal(images[idx]) : images[idx]);
    FeatureExtractor::Cache cache;
    const FeatureMap f = model.extractor.forward(t, &cache);
    Tensor3<double> grad(f.h(), f.w(), f.d());
    const auto objects = refine_objects(rec, stride, f.extent());
    double loss = 0.0;
    if (options.objective == RefinerObjective::kFixedRadius) {
      loss = cpr_training_loss(f, model.heads.stage(0), objects, options.radius, options.cascade.layout,
                               options.cascade.loss, true, &grad)
                 .total;
    } else {
      loss = cprpp_training_loss(f, model.heads, objects, options.cascade, true, &grad).total;
    }
    model.extractor.backward(cache, grad);
    return loss;
  };
  return run_epochs(dataset.images.size(), options.train, options.seed, adam, progress, step);
}

void refine_dataset(const RefinerModel& model, Dataset& dataset, const std::vector<Image>& images,
                    const RefinerTrainOptions& options) {
  if (images.size() != dataset.images.size()) throw PreconditionError("refine_dataset: images do not match dataset");
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    auto& rec = dataset.images[i];
    const FeatureMap f = model.extractor.forward(to_tensor(images[i]));
    if (options.objective == RefinerObjective::kCascade) {
      rec.refined_points = cprpp_infer_image(f, model.heads, rec, options.cascade);
      continue;
    }
    const auto objects = refine_objects(rec, f.stride, f.extent());
    const auto points = cpr_refine(f, model.heads.stage(0), objects, options.radius, options.cascade.layout,
                                   options.cascade.infer);
    rec.refined_points.clear();
    for (std::size_t j = 0; j < objects.size(); ++j) {
      RefinedPoint rp;
      rp.object_id = objects[j].object_id;
      rp.category = objects[j].category;
      rp.position = points[j] * static_cast<double>(f.stride);
      rp.stages = 1;
      rp.centers = {objects[j].annotated, points[j]};
      rp.radii = {options.radius};
      rec.refined_points.push_back(std::move(rp));
    }
  }
}

double mean_displacement(const Dataset& before, const Dataset& after) {
  auto positions = [](const Dataset& ds) {
    std::map<std::pair<std::int64_t, std::int64_t>, Point2> out;
    for (const auto& rec : ds.images) {
      for (const auto& p : rec.coarse_points) out[{rec.image_id, p.object_id}] = p.position;
      for (const auto& p : rec.refined_points) out[{rec.image_id, p.object_id}] = p.position;
    }
    return out;
  };
  const auto a = positions(before);
  const auto b = positions(after);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [key, p] : a) {
    const auto it = b.find(key);
    if (it == b.end()) continue;
    sum += distance(p, it->second);
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

namespace {

std::vector<GtPoint> supervision_points(const ImageRecord& rec, PointSource source) {
  std::vector<GtPoint> gts;
  if (source == PointSource::kRefined) {
    for (const auto& p : rec.refined_points) gts.push_back({p.object_id, p.category, p.position});
    return gts;
  }
  for (const auto& p : rec.coarse_points) {
    const ObjectAnnotation* obj = rec.find_object(p.object_id);
    if (obj && obj->ignore) continue;
    gts.push_back({p.object_id, p.category, p.position});
  }
  return gts;
}

}  // namespace

TrainLog train_localizer(LocalizerModel& model, const Dataset& dataset, const std::vector<Image>& images,
                         PointSource source, const TrainParams& train, std::uint64_t seed,
                         const ProgressFn& progress) {
  if (images.size() != dataset.images.size()) throw PreconditionError("train_localizer: images do not match dataset");
  if (source == PointSource::kRefined) {
    const bool any = std::any_of(dataset.images.begin(), dataset.images.end(),
                                 [](const ImageRecord& r) { return !r.refined_points.empty(); });
    if (!any && dataset.num_objects() > 0) throw InputError("dataset carries no refined points");
  }
  Localizer& loc = model.localizer;
  Adam adam({train.lr, 0.9, 0.999, 1e-8, train.weight_decay});
  for (auto* p : loc.backbone().parameters()) adam.add(p);
  for (auto* p : loc.head_parameters()) adam.add(p);
  auto step = [&](std::size_t idx, bool flip) {
    const ImageRecord rec = flip ? flipped(dataset.images[idx]) : dataset.images[idx];
    const Tensor3<float> t = to_tensor(flip ? flip_horizontal(images[idx]) : images[idx]);
    Localizer::Cache cache;
    const LocalizerOutput out = loc.forward(t, &cache);
    const auto anchors = make_anchors(out.cls_logits.h, out.cls_logits.w, loc.stride());
    const auto targets = assign_targets(anchors, supervision_points(rec, source), loc.config().topk);
    LocalizerOutput grad;
    const auto terms = localizer_loss(out, targets, loc.config().loss, &grad);
    loc.backward(cache, grad);
    return terms.total;
  };
  return run_epochs(dataset.images.size(), train, seed, adam, progress, step);
}

std::vector<PointPrediction> predict_dataset(const LocalizerModel& model, const Dataset& dataset,
                                             const std::vector<Image>& images) {
  std::vector<PointPrediction> out;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    for (const auto& p : model.localizer.predict(to_tensor(images[i])))
      out.push_back({dataset.images[i].image_id, p.category, p.position, p.score});
  }
  return out;
}

namespace {

json categories_json(const std::vector<Category>& cats) {
  json arr = json::array();
  for (const auto& c : cats) arr.push_back({{"id", c.id}, {"name", c.name}, {"source_id", c.source_id}});
  return arr;
}

std::vector<Category> categories_from(const json& arr) {
  std::vector<Category> cats;
  for (const auto& c : arr) cats.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(), c.at("source_id").get<std::int64_t>()});
  return cats;
}

template <typename T>
void put_params(json& obj, const std::vector<Parameter<T>*>& params) {
  for (const auto* p : params) obj[p->name] = p->value;
}

template <typename T>
void get_params(const json& obj, const std::vector<Parameter<T>*>& params, const std::filesystem::path& path) {
  for (auto* p : params) {
    if (!obj.contains(p->name)) throw ParseError(fmt::format("{}: missing parameter {}", path.string(), p->name));
    auto v = obj.at(p->name).template get<std::vector<T>>();
    if (v.size() != p->size())
      throw ParseError(fmt::format("{}: parameter {} has {} values, expected {}", path.string(), p->name, v.size(), p->size()));
    p->value = std::move(v);
  }
}

json extractor_json(const ExtractorConfig& e) {
  return {{"stride", e.stride}, {"width", e.width}, {"depth", e.tower_depth}};
}

ExtractorConfig extractor_from(const json& j) {
  ExtractorConfig e;
  e.stride = j.at("stride").get<int>();
  e.width = j.at("width").get<int>();
  e.tower_depth = j.at("depth").get<int>();
  return e;
}

void write_json(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump();
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace

void save_refiner(const RefinerModel& model, const std::filesystem::path& path) {
  json j;
  j["kind"] = "refiner";
  j["extractor"] = extractor_json(model.extractor.config());
  j["stages"] = model.heads.num_stages();
  j["categories"] = categories_json(model.categories);
  j["config_hash"] = model.config_hash;
  json params = json::object();
  auto& mut = const_cast<RefinerModel&>(model);
  put_params(params, mut.extractor.parameters());
  put_params(params, mut.heads.parameters());
  j["params"] = std::move(params);
  write_json(j, path);
}

RefinerModel load_refiner(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    if (j.at("kind") != "refiner") throw ParseError(fmt::format("{}: not a refiner checkpoint", path.string()));
    RefinerModel m = make_refiner(extractor_from(j.at("extractor")), categories_from(j.at("categories")),
                                  j.at("stages").get<int>(), 0);
    m.config_hash = j.value("config_hash", "");
    get_params(j.at("params"), m.extractor.parameters(), path);
    get_params(j.at("params"), m.heads.parameters(), path);
    return m;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void save_localizer(const LocalizerModel& model, const std::filesystem::path& path) {
  const auto& cfg = model.localizer.config();
  json j;
  j["kind"] = "localizer";
  j["extractor"] = extractor_json(cfg.extractor);
  j["categories"] = categories_json(model.categories);
  j["config_hash"] = model.config_hash;
  j["inference"] = {{"score_threshold", cfg.score_threshold}, {"nms_box", cfg.nms_box}, {"nms_iou", cfg.nms_iou},
                    {"max_detections", cfg.max_detections}, {"topk", cfg.topk}};
  json params = json::object();
  auto& mut = const_cast<LocalizerModel&>(model);
  put_params(params, mut.localizer.backbone().parameters());
  put_params(params, mut.localizer.head_parameters());
  j["params"] = std::move(params);
  write_json(j, path);
}

LocalizerModel load_localizer(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    if (j.at("kind") != "localizer") throw ParseError(fmt::format("{}: not a localizer checkpoint", path.string()));
    LocalizerConfig cfg;
    cfg.extractor = extractor_from(j.at("extractor"));
    const auto& inf = j.at("inference");
    cfg.score_threshold = inf.at("score_threshold").get<double>();
    cfg.nms_box = inf.at("nms_box").get<double>();
    cfg.nms_iou = inf.at("nms_iou").get<double>();
    cfg.max_detections = inf.at("max_detections").get<int>();
    cfg.topk = inf.at("topk").get<int>();
    LocalizerModel m;
    m.categories = categories_from(j.at("categories"));
    m.localizer = Localizer(cfg, static_cast<int>(m.categories.size()), 0);
    m.config_hash = j.value("config_hash", "");
    get_params(j.at("params"), m.localizer.backbone().parameters(), path);
    get_params(j.at("params"), m.localizer.head_parameters(), path);
    return m;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void save_predictions(const std::vector<PointPrediction>& predictions, const Dataset& dataset,
                      const std::filesystem::path& path) {
  std::map<std::int64_t, json> per_image;
  for (const auto& rec : dataset.images) per_image[rec.image_id] = json::array();
  for (const auto& p : predictions) {
    const auto& cat = dataset.categories.at(static_cast<std::size_t>(p.category));
    per_image[p.image_id].push_back(
        {{"category", cat.source_id}, {"x", p.position.x}, {"y", p.position.y}, {"score", p.score}});
  }
  json arr = json::array();
  for (auto& [id, preds] : per_image) arr.push_back({{"image_id", id}, {"predictions", std::move(preds)}});
  json j;
  j["categories"] = categories_json(dataset.categories);
  j["images"] = std::move(arr);
  write_json(j, path);
}

std::vector<PointPrediction> load_predictions(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    std::map<std::int64_t, int> dense;
    for (const auto& c : j.at("categories")) dense[c.at("source_id").get<std::int64_t>()] = c.at("id").get<int>();
    std::vector<PointPrediction> out;
    for (const auto& img : j.at("images")) {
      const auto id = img.at("image_id").get<std::int64_t>();
      for (const auto& p : img.at("predictions")) {
        const auto src = p.at("category").get<std::int64_t>();
        const auto it = dense.find(src);
        if (it == dense.end()) throw ParseError(fmt::format("{}: unknown category {}", path.string(), src));
        out.push_back({id, it->second, {p.at("x").get<double>(), p.at("y").get<double>()}, p.at("score").get<double>()});
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace cpr
