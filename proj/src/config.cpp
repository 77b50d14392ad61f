#include "cpr/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

namespace cpr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: cannot parse '{}'", key, v));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define CPR_INT(KEY, EXPR, MIN)                                                             \
  Field{KEY,                                                                                \
        [](ExperimentConfig& c, const std::string& v) {                                     \
          const auto x = parse_number<long long>(KEY, v);                                   \
          if (x < (MIN)) throw ConfigError(fmt::format("{} must be >= {}", KEY, (MIN)));     \
          c.EXPR = static_cast<std::remove_reference_t<decltype(c.EXPR)>>(x);               \
        },                                                                                  \
        [](const ExperimentConfig& c) { return fmt::format("{}", c.EXPR); }}

#define CPR_DOUBLE(KEY, EXPR)                                                                   \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = parse_number<double>(KEY, v); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.EXPR); }}

#define CPR_BOOL(KEY, EXPR)                                                                   \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.EXPR ? "true" : "false"); }}

#define CPR_PATH(KEY, EXPR)                                                       \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = v; }, \
        [](const ExperimentConfig& c) { return c.EXPR.string(); }}

template <typename E>
struct EnumName {
  const char* name;
  E value;
};

const EnumName<RefineMethod> kMethods[] = {
    {"none", RefineMethod::kNone}, {"cpr", RefineMethod::kCpr}, {"cprpp", RefineMethod::kCprpp},
    {"iterative", RefineMethod::kIterative}};
const EnumName<CascadeMode> kModes[] = {
    {"cascade-II", CascadeMode::kCascadeII}, {"cascade-I", CascadeMode::kCascadeI}, {"single", CascadeMode::kSingle}};
const EnumName<SamplingShape> kShapes[] = {{"circle", SamplingShape::kCircle}, {"rect", SamplingShape::kRect}};
const EnumName<VarReduction> kReductions[] = {{"sum", VarReduction::kSum}, {"mean", VarReduction::kMean}};
const EnumName<AnnotationFormat> kFormats[] = {{"coco", AnnotationFormat::kCocoJson},
                                               {"internal", AnnotationFormat::kInternalJson}};

template <typename E, std::size_t N>
E parse_enum(const std::string& key, const std::string& v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names)
    if (v == n.name) return n.value;
  std::string options;
  for (const auto& n : names) options += fmt::format("{}{}", options.empty() ? "" : ", ", n.name);
  throw ConfigError(fmt::format("{}: '{}' is not one of {}", key, v, options));
}

template <typename E, std::size_t N>
std::string enum_name(E value, const EnumName<E> (&names)[N]) {
  for (const auto& n : names)
    if (n.value == value) return n.name;
  return "?";
}

#define CPR_ENUM(KEY, EXPR, TABLE)                                                                   \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = parse_enum(KEY, v, TABLE); }, \
        [](const ExperimentConfig& c) { return enum_name(c.EXPR, TABLE); }}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  if (out.empty()) throw ConfigError(fmt::format("{}: empty list", key));
  return out;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CPR_INT("seed", seed, 0),
      CPR_PATH("out", out),
      CPR_PATH("data.train", train_path),
      CPR_PATH("data.test", test_path),
      CPR_ENUM("data.format", format, kFormats),
      CPR_INT("synth.train_images", synth.train_images, 1),
      CPR_INT("synth.test_images", synth.test_images, 0),
      CPR_INT("synth.categories", synth.categories, 1),
      CPR_INT("synth.image_size", synth.image_size, 16),
      CPR_DOUBLE("synth.min_size", synth.min_size),
      CPR_DOUBLE("synth.max_size", synth.max_size),
      CPR_INT("synth.min_objects", synth.min_objects, 0),
      CPR_INT("synth.max_objects", synth.max_objects, 0),
      CPR_DOUBLE("synth.clutter", synth.clutter),
      CPR_DOUBLE("points.sigma", point_sigma),
      CPR_INT("model.stride", extractor.stride, 4),
      CPR_INT("model.width", extractor.width, 1),
      CPR_INT("model.depth", extractor.tower_depth, 0),
      CPR_ENUM("refine.method", method, kMethods),
      CPR_INT("refine.radius", cpr_radius, 1),
      CPR_INT("refine.iterations", iterations, 0),
      CPR_INT("refine.stages", cascade.stages, 1),
      CPR_INT("refine.r_init", cascade.r_init, 1),
      CPR_ENUM("refine.mode", cascade.mode, kModes),
      CPR_INT("refine.u0", cascade.layout.u0, 1),
      CPR_ENUM("refine.shape", cascade.layout.shape, kShapes),
      CPR_DOUBLE("refine.aspect", cascade.layout.aspect),
      CPR_DOUBLE("refine.delta1", cascade.infer.delta1),
      CPR_DOUBLE("refine.delta2", cascade.infer.delta2),
      CPR_BOOL("refine.nearest_any_category", cascade.infer.nearest_any_category),
      CPR_DOUBLE("loss.alpha_ann", cascade.loss.weights.alpha_ann),
      CPR_DOUBLE("loss.alpha_neg", cascade.loss.weights.alpha_neg),
      CPR_DOUBLE("loss.gamma", cascade.loss.weights.gamma),
      CPR_BOOL("loss.neg_per_point", cascade.loss.neg_per_point),
      CPR_BOOL("loss.var", cascade.use_var),
      CPR_ENUM("loss.var_reduction", cascade.var_reduction, kReductions),
      CPR_DOUBLE("loss.var_weight", cascade.var_weight),
      CPR_DOUBLE("loss.var_sigma", cascade.var_sigma),
      CPR_INT("refiner.epochs", refiner_train.epochs, 0),
      CPR_INT("refiner.batch", refiner_train.batch, 1),
      CPR_DOUBLE("refiner.lr", refiner_train.lr),
      CPR_DOUBLE("refiner.weight_decay", refiner_train.weight_decay),
      CPR_BOOL("refiner.flip", refiner_train.flip),
      CPR_INT("localizer.epochs", localizer_train.epochs, 0),
      CPR_INT("localizer.batch", localizer_train.batch, 1),
      CPR_DOUBLE("localizer.lr", localizer_train.lr),
      CPR_DOUBLE("localizer.weight_decay", localizer_train.weight_decay),
      CPR_BOOL("localizer.flip", localizer_train.flip),
      CPR_INT("localizer.stride", localizer_stride, 0),
      CPR_INT("localizer.topk", localizer.topk, 1),
      CPR_DOUBLE("localizer.lambda_reg", localizer.loss.lambda_reg),
      CPR_DOUBLE("localizer.gamma", localizer.loss.gamma),
      CPR_DOUBLE("localizer.alpha", localizer.loss.alpha),
      CPR_DOUBLE("localizer.score_threshold", localizer.score_threshold),
      CPR_DOUBLE("localizer.nms_box", localizer.nms_box),
      CPR_DOUBLE("localizer.nms_iou", localizer.nms_iou),
      CPR_INT("localizer.max_detections", localizer.max_detections, 1),
      Field{"eval.taus", [](ExperimentConfig& c, const std::string& v) { c.taus = parse_list("eval.taus", v); },
            [](const ExperimentConfig& c) {
              std::string s;
              for (double t : c.taus) s += fmt::format("{}{}", s.empty() ? "" : ",", t);
              return s;
            }},
  };
  return table;
}

void validate(const ExperimentConfig& c) {
  if (c.extractor.stride != 4 && c.extractor.stride != 8) throw ConfigError("model.stride must be 4 or 8");
  if (c.localizer_stride != 0 && c.localizer_stride != 4 && c.localizer_stride != 8)
    throw ConfigError("localizer.stride must be 0, 4 or 8");
  if (!(c.point_sigma > 0.0)) throw ConfigError("points.sigma must be positive");
  if (c.synth.min_size <= 0 || c.synth.max_size < c.synth.min_size) throw ConfigError("synth size range is invalid");
  if (c.synth.max_objects < c.synth.min_objects) throw ConfigError("synth object count range is invalid");
  if (!(c.cascade.layout.aspect > 0.0)) throw ConfigError("refine.aspect must be positive");
  if (c.localizer.nms_box <= 0.0) throw ConfigError("localizer.nms_box must be positive");
}

}  // namespace

std::string ExperimentConfig::to_text() const {
  std::string s;
  for (const auto& f : fields()) s += fmt::format("{} = {}\n", f.key, f.get(*this));
  return s;
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

namespace {

void sync_localizer(ExperimentConfig& c) {
  c.localizer.extractor = c.extractor;
  if (c.localizer_stride) c.localizer.extractor.stride = c.localizer_stride;
}

void apply(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
  if (it == table.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  it->set(config, value);
  sync_localizer(config);
}

}  // namespace

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  apply(config, key, value);
  validate(config);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    try {
      apply(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  sync_localizer(c);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

const char* to_string(RefineMethod method) {
  for (const auto& n : kMethods)
    if (n.value == method) return n.name;
  return "?";
}

const char* to_string(CascadeMode mode) {
  for (const auto& n : kModes)
    if (n.value == mode) return n.name;
  return "?";
}

}  // namespace cpr
