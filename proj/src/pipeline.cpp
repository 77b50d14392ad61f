#include "cpr/pipeline.hpp"

#include <chrono>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "cpr/log.hpp"
#include "cpr/synth.hpp"
#include "cpr/visualize.hpp"

#ifndef CPR_VERSION
#define CPR_VERSION "0.0.0-unknown"
#endif

namespace cpr {

using json = nlohmann::json;

StageError::StageError(std::string stage, const std::string& message)
    : Error(fmt::format("{}: {}", stage, message)), stage_(std::move(stage)) {}

const char* library_version() { return CPR_VERSION; }

namespace {

RefinerTrainOptions refiner_options(const ExperimentConfig& c, std::uint64_t seed) {
  RefinerTrainOptions o;
  o.train = c.refiner_train;
  o.cascade = c.cascade;
  o.radius = c.cpr_radius;
  o.seed = seed;
  o.objective = c.method == RefineMethod::kCprpp ? RefinerObjective::kCascade : RefinerObjective::kFixedRadius;
  return o;
}

int refiner_stages(const ExperimentConfig& c) {
  return c.method == RefineMethod::kCprpp ? c.cascade.effective_stages() : 1;
}

// Promotes refined points to the coarse points of the next round.
void promote_refined(Dataset& ds) {
  for (auto& rec : ds.images) {
    for (auto& cp : rec.coarse_points)
      for (const auto& rp : rec.refined_points)
        if (rp.object_id == cp.object_id) cp.position = rp.position;
    rec.refined_points.clear();
  }
}

}  // namespace

std::vector<double> iterative_cpr(Dataset& dataset, const std::vector<Image>& images, const ExperimentConfig& config,
                                  int iterations) {
  std::vector<double> displacement;
  Dataset current = dataset;
  for (auto& rec : current.images) rec.refined_points.clear();
  for (int it = 0; it < iterations; ++it) {
    const std::uint64_t seed = config.seed + 1000 * static_cast<std::uint64_t>(it + 1);
    RefinerTrainOptions opts = refiner_options(config, seed);
    opts.objective = RefinerObjective::kFixedRadius;
    RefinerModel model = make_refiner(config.extractor, current.categories, 1, seed);
    train_refiner(model, current, images, opts);
    Dataset next = current;
    refine_dataset(model, next, images, opts);
    const double d = mean_displacement(current, next);
    displacement.push_back(d);
    log_info(fmt::format("iterative CPR round {}: mean displacement {:.3f} px", it + 1, d));
    current = std::move(next);
    if (it + 1 < iterations) promote_refined(current);
  }
  // Final refined points relative to the original annotations.
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    auto& rec = dataset.images[i];
    rec.refined_points.clear();
    if (iterations == 0) {
      for (const auto& cp : rec.coarse_points) {
        const ObjectAnnotation* obj = rec.find_object(cp.object_id);
        if (obj && obj->ignore) continue;
        RefinedPoint rp;
        rp.object_id = cp.object_id;
        rp.category = cp.category;
        rp.position = cp.position;
        rec.refined_points.push_back(rp);
      }
    } else {
      rec.refined_points = current.images[i].refined_points;
      for (auto& rp : rec.refined_points) rp.stages = iterations;
    }
  }
  return displacement;
}

Pipeline::Pipeline(ExperimentConfig config, bool resume) : config_(std::move(config)), resume_(resume) {
  manifest_.config_hash = config_.hash();
  manifest_.version = library_version();
  load_manifest();
}

std::filesystem::path Pipeline::train_annotations() const {
  return config_.train_path.empty() ? path("data/train.json") : config_.train_path;
}

std::filesystem::path Pipeline::test_annotations() const {
  return config_.test_path.empty() ? path("data/test.json") : config_.test_path;
}

void Pipeline::load_manifest() {
  const auto p = path("manifest.json");
  if (!std::filesystem::exists(p)) return;
  try {
    std::ifstream in(p);
    const json j = json::parse(in);
    if (j.value("config_hash", "") != manifest_.config_hash) return;
    for (const auto& s : j.at("stages")) {
      StageRecord r;
      r.name = s.at("name").get<std::string>();
      r.artifacts = s.at("artifacts").get<std::vector<std::string>>();
      r.seconds = s.at("seconds").get<double>();
      manifest_.stages.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    log_warning(fmt::format("ignoring unreadable manifest {}: {}", p.string(), e.what()));
    manifest_.stages.clear();
  }
}

void Pipeline::save_manifest() const {
  json stages = json::array();
  for (const auto& s : manifest_.stages)
    stages.push_back({{"name", s.name}, {"artifacts", s.artifacts}, {"seconds", s.seconds}, {"reused", s.reused}});
  const json j = {{"config_hash", manifest_.config_hash}, {"version", manifest_.version}, {"stages", stages},
                  {"config", config_.to_text()}};
  std::filesystem::create_directories(config_.out);
  std::ofstream out(path("manifest.json"));
  out << j.dump(2) << '\n';
  std::ofstream cfg(path("config.txt"));
  cfg << config_.to_text();
}

template <typename Fn>
void Pipeline::stage(const std::string& name, const std::vector<std::string>& artifacts, Fn&& fn) {
  auto it = std::find_if(manifest_.stages.begin(), manifest_.stages.end(),
                         [&](const StageRecord& r) { return r.name == name; });
  const bool present = std::all_of(artifacts.begin(), artifacts.end(),
                                   [&](const std::string& a) { return std::filesystem::exists(path(a)); });
  if (resume_ && it != manifest_.stages.end() && present) {
    it->reused = true;
    log_info(fmt::format("[{}] reusing artifacts", name));
    return;
  }
  log_info(fmt::format("[{}] running", name));
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (it != manifest_.stages.end()) manifest_.stages.erase(it);
  manifest_.stages.push_back({name, artifacts, secs, false});
  save_manifest();
}

void Pipeline::synth() {
  stage("synth", {"data/train.json", "data/test.json"}, [&] {
    const auto dir = path("data");
    Dataset train = synth_dataset(config_.synth, config_.seed, config_.synth.train_images, dir, "train", 0);
    save_dataset(train, dir / "train.json");
    Dataset test = synth_dataset(config_.synth, config_.seed ^ 0x5bd1e995ULL, config_.synth.test_images, dir, "test",
                                 1000000);
    save_dataset(test, dir / "test.json");
  });
}

Dataset Pipeline::load_train_source() const {
  const bool internal = config_.train_path.empty() || config_.format == AnnotationFormat::kInternalJson;
  return load_dataset(train_annotations(), internal ? AnnotationFormat::kInternalJson : AnnotationFormat::kCocoJson);
}

void Pipeline::gen_points() {
  stage("gen-points", {"points/train.json"}, [&] {
    Dataset ds = load_train_source();
    generate_coarse_points(ds, config_.seed, config_.point_sigma);
    for (auto& rec : ds.images) rec.refined_points.clear();
    ds.image_root = std::filesystem::absolute(ds.image_root);
    save_dataset(ds, path("points/train.json"));
  });
}

namespace {

Dataset load_internal(const std::filesystem::path& p) { return load_dataset(p, AnnotationFormat::kInternalJson); }

}  // namespace

void Pipeline::train_refiner() {
  stage("train-refiner", {"refiner/model.json"}, [&] {
    std::filesystem::create_directories(path("refiner"));
    if (config_.method == RefineMethod::kNone || config_.method == RefineMethod::kIterative) {
      // Nothing to train up front: the baseline skips refinement and the
      // iterative variant trains inside the refine stage.
      std::ofstream(path("refiner/model.json")) << json{{"kind", "none"}, {"method", to_string(config_.method)}}.dump();
      return;
    }
    const Dataset ds = load_internal(path("points/train.json"));
    const auto images = load_images(ds);
    RefinerModel model = make_refiner(config_.extractor, ds.categories, refiner_stages(config_), config_.seed);
    model.config_hash = manifest_.config_hash;
    const auto log = cpr::train_refiner(model, ds, images, refiner_options(config_, config_.seed),
                                        [](int epoch, double loss) {
                                          log_info(fmt::format("  refiner epoch {}: loss {:.5f}", epoch + 1, loss));
                                        });
    save_refiner(model, path("refiner/model.json"));
    std::ofstream(path("refiner/log.json")) << json{{"epoch_loss", log.epoch_loss}}.dump();
  });
}

void Pipeline::refine() {
  stage("refine", {"refine/train.json"}, [&] {
    Dataset ds = load_internal(path("points/train.json"));
    switch (config_.method) {
      case RefineMethod::kNone:
        break;
      case RefineMethod::kIterative: {
        const auto images = load_images(ds);
        const auto d = iterative_cpr(ds, images, config_, config_.iterations);
        std::filesystem::create_directories(path("refine"));
        std::ofstream(path("refine/displacement.json")) << json{{"mean_displacement_px", d}}.dump();
        break;
      }
      default: {
        const auto images = load_images(ds);
        const RefinerModel model = load_refiner(path("refiner/model.json"));
        refine_dataset(model, ds, images, refiner_options(config_, config_.seed));
        const Dataset before = load_internal(path("points/train.json"));
        log_info(fmt::format("  mean displacement {:.3f} px", mean_displacement(before, ds)));
      }
    }
    save_dataset(ds, path("refine/train.json"));
  });
}

void Pipeline::train_localizer() {
  stage("train-localizer", {"localizer/model.json"}, [&] {
    const Dataset ds = load_internal(path("refine/train.json"));
    const auto images = load_images(ds);
    LocalizerModel model;
    model.categories = ds.categories;
    model.localizer = Localizer(config_.localizer, ds.num_categories(), config_.seed + 7);
    model.config_hash = manifest_.config_hash;
    const PointSource source = config_.method == RefineMethod::kNone ? PointSource::kCoarse : PointSource::kRefined;
    cpr::train_localizer(model, ds, images, source, config_.localizer_train, config_.seed + 11,
                         [](int epoch, double loss) {
                           log_info(fmt::format("  localizer epoch {}: loss {:.5f}", epoch + 1, loss));
                         });
    save_localizer(model, path("localizer/model.json"));
  });
}

MetricTable Pipeline::evaluate() {
  MetricTable table;
  stage("evaluate", {"eval/metrics.json", "eval/metrics.txt", "eval/predictions.json"}, [&] {
    const bool internal = config_.test_path.empty() || config_.format == AnnotationFormat::kInternalJson;
    const Dataset test =
        load_dataset(test_annotations(), internal ? AnnotationFormat::kInternalJson : AnnotationFormat::kCocoJson);
    const auto images = load_images(test);
    const LocalizerModel model = load_localizer(path("localizer/model.json"));
    const auto preds = predict_dataset(model, test, images);
    save_predictions(preds, test, path("eval/predictions.json"));
    table = map_report(preds, test, config_.taus);
    std::ofstream(path("eval/metrics.json")) << metric_table_json(table);
    std::ofstream(path("eval/metrics.txt")) << format_metric_table(table);
  });
  if (table.taus.empty()) {
    // Reused: rebuild the table from stored predictions.
    const bool internal = config_.test_path.empty() || config_.format == AnnotationFormat::kInternalJson;
    const Dataset test =
        load_dataset(test_annotations(), internal ? AnnotationFormat::kInternalJson : AnnotationFormat::kCocoJson);
    table = map_report(load_predictions(path("eval/predictions.json")), test, config_.taus);
  }
  metrics_ = table;
  return table;
}

std::vector<std::filesystem::path> Pipeline::visualize(const std::string& artifact,
                                                       const std::vector<std::int64_t>& ids) {
  std::vector<std::filesystem::path> written;
  try {
    VisualizeRequest req;
    req.image_ids = ids;
    req.out_dir = path("figures");
    RefinerModel refiner;
    std::vector<PointPrediction> preds;
    Dataset ds;
    if (artifact == "heatmaps") {
      req.artifact = VisualArtifact::kHeatmaps;
      ds = load_internal(path("points/train.json"));
      refiner = load_refiner(path("refiner/model.json"));
      req.refiner = &refiner;
      req.cascade = &config_.cascade;
      if (config_.method != RefineMethod::kCprpp) {
        static thread_local CascadeConfig single;
        single = config_.cascade;
        single.mode = CascadeMode::kSingle;
        single.r_init = config_.cpr_radius;
        req.cascade = &single;
      }
    } else if (artifact == "refined-points") {
      req.artifact = VisualArtifact::kRefinedPoints;
      ds = load_internal(path("refine/train.json"));
    } else if (artifact == "predictions") {
      req.artifact = VisualArtifact::kPredictions;
      const bool internal = config_.test_path.empty() || config_.format == AnnotationFormat::kInternalJson;
      ds = load_dataset(test_annotations(), internal ? AnnotationFormat::kInternalJson : AnnotationFormat::kCocoJson);
      preds = load_predictions(path("eval/predictions.json"));
      req.predictions = &preds;
    } else {
      throw ConfigError(fmt::format("unknown artifact '{}' (heatmaps, refined-points, predictions)", artifact));
    }
    // Only decode the images that will be drawn.
    Dataset subset = ds;
    if (!ids.empty()) {
      subset.images.clear();
      for (const auto& rec : ds.images)
        if (std::find(ids.begin(), ids.end(), rec.image_id) != ids.end()) subset.images.push_back(rec);
    }
    const auto images = load_images(subset);
    written = cpr::visualize(subset, images, req);
  } catch (const std::exception& e) {
    throw StageError("visualize", e.what());
  }
  return written;
}

RunManifest Pipeline::run() {
  if (config_.train_path.empty()) synth();
  gen_points();
  train_refiner();
  refine();
  train_localizer();
  evaluate();
  return manifest_;
}

}  // namespace cpr
