#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "densemp/encoder.hpp"
#include "densemp/fewshot.hpp"
#include "densemp/split.hpp"
#include "densemp/stage1.hpp"

namespace densemp {

struct DataConfig {
  std::string manifest;
  int image_size = 32;
  int replicate_channels = 1;
  SplitSetting setting = SplitSetting::kSetting2;
  int fold = 0;
  std::vector<int> folds{0};  ///< Folds visited by run-all (cross-validation).
  int n_folds = kDefaultFolds;
  std::set<int> test_classes{3, 4};
};

struct FinetuneConfig {
  int iterations = 500;
  double gt_probability = 0.5;  ///< Chance that an iteration uses a ground-truth episode.
  double lr = 0.005;
  /// "all" or "last_block": which parameters receive updates.
  std::string unfreeze = "all";
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "densemp_out";
  DataConfig data;
  EncoderConfig encoder;
  Stage1Config stage1;
  Stage2Config stage2;
  FinetuneConfig finetune;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected with ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_fingerprint(const PipelineConfig& config);

void to_json(nlohmann::json& j, const TransformSpec& t);
void from_json(const nlohmann::json& j, TransformSpec& t);

}  // namespace densemp
