#include "densemp/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "densemp/errors.hpp"

namespace densemp {

using nlohmann::json;

void to_json(json& j, const TransformSpec& t) {
  j = json{{"rotation_deg", {t.rotation_deg.lo, t.rotation_deg.hi}},
           {"translation", {t.translation.lo, t.translation.hi}},
           {"scale", {t.scale.lo, t.scale.hi}},
           {"gamma", {t.gamma.lo, t.gamma.hi}},
           {"brightness", {t.brightness.lo, t.brightness.hi}},
           {"noise_std", t.noise_std}};
}

namespace {

Interval interval_from(const json& j, const char* key, Interval fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number()) return {v.get<double>(), v.get<double>()};
  if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("interval '") + key + "' must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

// Every key in `doc` must exist in `reference`; arrays and scalars are leaves.
void check_known_keys(const json& doc, const json& reference, const std::string& path) {
  if (!doc.is_object()) return;
  if (!reference.is_object()) throw ConfigError("config key '" + path + "' is not an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string here = path.empty() ? it.key() : path + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + here + "'");
    if (it.value().is_object()) check_known_keys(it.value(), reference.at(it.key()), here);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

json felz_to_json(const FelzParams& p) {
  return {{"k_scale", p.k_scale}, {"sigma", p.sigma}, {"min_size", p.min_size}};
}

}  // namespace

void from_json(const json& j, TransformSpec& t) {
  const TransformSpec d = t;
  t.rotation_deg = interval_from(j, "rotation_deg", d.rotation_deg);
  t.translation = interval_from(j, "translation", d.translation);
  t.scale = interval_from(j, "scale", d.scale);
  t.gamma = interval_from(j, "gamma", d.gamma);
  t.brightness = interval_from(j, "brightness", d.brightness);
  t.noise_std = j.value("noise_std", d.noise_std);
}

void PipelineConfig::validate() const {
  if (data.image_size < 8) throw ConfigError("data.image_size must be >= 8");
  if (data.replicate_channels != 1 && data.replicate_channels != 3)
    throw ConfigError("data.replicate_channels must be 1 or 3");
  if (data.n_folds < 1) throw ConfigError("data.n_folds must be >= 1");
  if (data.fold < 0 || data.fold >= data.n_folds) throw ConfigError("data.fold out of range");
  if (data.folds.empty()) throw ConfigError("data.folds must not be empty");
  for (int f : data.folds)
    if (f < 0 || f >= data.n_folds) throw ConfigError("data.folds entry out of range");
  if (data.test_classes.empty()) throw ConfigError("data.test_classes must not be empty");
  for (int c : data.test_classes)
    if (c <= 0) throw ConfigError("data.test_classes must be positive class ids");
  encoder.validate();
  if (encoder.input_size != data.image_size) throw ConfigError("encoder.input_size must equal data.image_size");
  if (encoder.input_channels != data.replicate_channels)
    throw ConfigError("encoder.input_channels must equal data.replicate_channels");
  stage1.validate();
  if (stage1.S != encoder.grid_size) throw ConfigError("stage1.S must equal encoder.grid_size");
  stage2.validate();
  if (finetune.iterations < 0) throw ConfigError("finetune.iterations must be >= 0");
  if (!(finetune.gt_probability >= 0.0 && finetune.gt_probability <= 1.0))
    throw ConfigError("finetune.gt_probability must lie in [0, 1]");
  if (!(finetune.lr >= 0.0)) throw ConfigError("finetune.lr must be >= 0");
  if (finetune.unfreeze != "all" && finetune.unfreeze != "last_block")
    throw ConfigError("finetune.unfreeze must be 'all' or 'last_block'");
}

json to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"manifest", c.data.manifest},
               {"image_size", c.data.image_size},
               {"replicate_channels", c.data.replicate_channels},
               {"setting", static_cast<int>(c.data.setting)},
               {"fold", c.data.fold},
               {"folds", c.data.folds},
               {"n_folds", c.data.n_folds},
               {"test_classes", c.data.test_classes}};
  j["encoder"] = c.encoder;
  j["stage1"] = {{"tau", c.stage1.tau},
                 {"lambda_dense", c.stage1.lambda_dense},
                 {"K", c.stage1.K},
                 {"S", c.stage1.S},
                 {"batch_images", c.stage1.batch_images},
                 {"queue_size", c.stage1.queue_size},
                 {"lr", c.stage1.lr},
                 {"momentum", c.stage1.momentum},
                 {"weight_decay", c.stage1.weight_decay},
                 {"iterations", c.stage1.iterations},
                 {"augment", c.stage1.augment}};
  j["stage2"] = {{"lambda_par", c.stage2.lambda_par},
                 {"alpha", c.stage2.prototypes.alpha},
                 {"window", c.stage2.prototypes.window},
                 {"coverage_threshold", c.stage2.prototypes.coverage_threshold},
                 {"iterations", c.stage2.iterations},
                 {"lr", c.stage2.lr},
                 {"momentum", c.stage2.momentum},
                 {"weight_decay", c.stage2.weight_decay},
                 {"superpixels", felz_to_json(c.stage2.superpixels)},
                 {"min_fg", c.stage2.min_fg},
                 {"episode_transform", c.stage2.episode_transform}};
  j["finetune"] = {{"iterations", c.finetune.iterations},
                   {"gt_probability", c.finetune.gt_probability},
                   {"lr", c.finetune.lr},
                   {"unfreeze", c.finetune.unfreeze}};
  return j;
}

PipelineConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  check_known_keys(j, to_json(c), "");
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    read(d, "manifest", c.data.manifest);
    read(d, "image_size", c.data.image_size);
    read(d, "replicate_channels", c.data.replicate_channels);
    int setting = static_cast<int>(c.data.setting);
    read(d, "setting", setting);
    if (setting != 1 && setting != 2) throw ConfigError("data.setting must be 1 or 2");
    c.data.setting = static_cast<SplitSetting>(setting);
    read(d, "fold", c.data.fold);
    read(d, "folds", c.data.folds);
    read(d, "n_folds", c.data.n_folds);
    read(d, "test_classes", c.data.test_classes);
  }
  // Encoder input follows the data section unless set explicitly.
  c.encoder.input_size = c.data.image_size;
  c.encoder.input_channels = c.data.replicate_channels;
  if (j.contains("encoder")) {
    json merged = c.encoder;
    merged.update(j.at("encoder"));
    try {
      c.encoder = merged.get<EncoderConfig>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("encoder: ") + e.what());
    }
  }
  c.stage1.S = c.encoder.grid_size;
  if (j.contains("stage1")) {
    const auto& s = j.at("stage1");
    read(s, "tau", c.stage1.tau);
    read(s, "lambda_dense", c.stage1.lambda_dense);
    read(s, "K", c.stage1.K);
    read(s, "S", c.stage1.S);
    read(s, "batch_images", c.stage1.batch_images);
    read(s, "queue_size", c.stage1.queue_size);
    read(s, "lr", c.stage1.lr);
    read(s, "momentum", c.stage1.momentum);
    read(s, "weight_decay", c.stage1.weight_decay);
    read(s, "iterations", c.stage1.iterations);
    if (s.contains("augment")) from_json(s.at("augment"), c.stage1.augment);
  }
  if (j.contains("stage2")) {
    const auto& s = j.at("stage2");
    read(s, "lambda_par", c.stage2.lambda_par);
    read(s, "alpha", c.stage2.prototypes.alpha);
    read(s, "window", c.stage2.prototypes.window);
    read(s, "coverage_threshold", c.stage2.prototypes.coverage_threshold);
    read(s, "iterations", c.stage2.iterations);
    read(s, "lr", c.stage2.lr);
    read(s, "momentum", c.stage2.momentum);
    read(s, "weight_decay", c.stage2.weight_decay);
    if (s.contains("superpixels")) {
      const auto& f = s.at("superpixels");
      read(f, "k_scale", c.stage2.superpixels.k_scale);
      read(f, "sigma", c.stage2.superpixels.sigma);
      read(f, "min_size", c.stage2.superpixels.min_size);
    }
    read(s, "min_fg", c.stage2.min_fg);
    if (s.contains("episode_transform")) from_json(s.at("episode_transform"), c.stage2.episode_transform);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    read(f, "iterations", c.finetune.iterations);
    read(f, "gt_probability", c.finetune.gt_probability);
    read(f, "lr", c.finetune.lr);
    read(f, "unfreeze", c.finetune.unfreeze);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must be key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &(*node)[path[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
  (*node)[path.back()] = std::move(value);
}

std::string config_fingerprint(const PipelineConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace densemp
