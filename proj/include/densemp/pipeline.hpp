#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "densemp/config.hpp"
#include "densemp/encoder.hpp"
#include "densemp/manifest.hpp"
#include "densemp/split.hpp"
#include "densemp/superpixel.hpp"

namespace densemp {

/// Slices, label maps and superpixel maps of a manifest, loaded on first use at the pipeline
/// resolution.
class SliceCache {
 public:
  SliceCache(DatasetManifest manifest, int image_size, int channels);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const ImageSlice& image(const std::string& slice_id);
  const LabelMap& labels(const std::string& slice_id);
  const SuperpixelMap& superpixels(const std::string& slice_id, const FelzParams& params);
  /// Indicator of `class_id` in the slice's label map.
  Mask class_mask(const std::string& slice_id, int class_id);

 private:
  DatasetManifest manifest_;
  int image_size_;
  int channels_;
  std::map<std::string, ImageSlice> images_;
  std::map<std::string, LabelMap> labels_;
  std::map<std::string, SuperpixelMap> superpixels_;
};

/// One line per training batch: which slices were read and which ground-truth class (if any)
/// supervised it.
struct AuditEntry {
  std::string phase;
  int iteration = 0;
  std::vector<std::string> slice_ids;
  std::optional<int> gt_class;
};

class AuditLog {
 public:
  void record(AuditEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<AuditEntry>& entries() const noexcept { return entries_; }
  /// JSON lines, appended.
  void append_to(const std::filesystem::path& path) const;
  static std::vector<AuditEntry> read(const std::filesystem::path& path);

 private:
  std::vector<AuditEntry> entries_;
};

struct AuditReport {
  std::size_t entries = 0;
  std::size_t slice_reads = 0;
  /// Test-class pixels exposed to training: under setting 2 every test-class pixel of every
  /// slice read; under setting 1 the pixels of any test-class ground-truth mask.
  std::int64_t test_class_pixels = 0;
};

AuditReport audit_test_class_exposure(const std::vector<AuditEntry>& entries, SliceCache& cache,
                                      SplitSetting setting, const std::set<int>& test_classes);

struct PhaseOutcome {
  std::vector<std::vector<double>> loss_rows;  ///< iteration, loss, extra columns.
  std::vector<std::string> loss_columns;
  nlohmann::json metrics = nlohmann::json::object();
};

/// Randomly initialized encoder, already rounded to float32 so a saved copy reloads unchanged.
Encoder initial_encoder(const PipelineConfig& config);

/// Per-fold root seed; every phase derives its per-iteration seeds from it.
std::uint64_t fold_seed(const PipelineConfig& config);

SplitPlan make_split(const PipelineConfig& config, const DatasetManifest& manifest);

PhaseOutcome train_stage1(Encoder& encoder, const PipelineConfig& config, SliceCache& cache, const SplitPlan& split,
                          AuditLog* audit = nullptr);
PhaseOutcome train_stage2(Encoder& encoder, const PipelineConfig& config, SliceCache& cache, const SplitPlan& split,
                          AuditLog* audit = nullptr);
PhaseOutcome train_finetune(Encoder& encoder, const PipelineConfig& config, SliceCache& cache, const SplitPlan& split,
                            AuditLog* audit = nullptr);

/// Pseudo episode number `counter` of a seed stream: a random training slice, one of its
/// superpixels, and a transformed copy as query. Retries failed constructions with fresh seeds;
/// more than 100 consecutive failures raise DataError.
FewShotEpisode sample_pseudo_episode(SliceCache& cache, const std::vector<std::string>& slice_ids,
                                     const Stage2Config& cfg, std::uint64_t seed);

/// Mean query Dice of `encoder` over the given episodes.
double episodes_dice(const Encoder& encoder, const std::vector<FewShotEpisode>& episodes, const PrototypeConfig& cfg);

struct EvalEpisode {
  const ImageSlice& support;
  const Mask& support_mask;
  const ImageSlice& query;
  const Mask& query_gt;
  int class_id;
};
using Predictor = std::function<Mask(const EvalEpisode&)>;

Predictor model_predictor(const Encoder& encoder, const PrototypeConfig& cfg);

struct ClassScore {
  std::vector<double> dice;  ///< One per query slice.
  double mean = 0.0;
  double std = 0.0;
  std::string support_slice;
};

struct FoldReport {
  int fold = 0;
  std::map<int, ClassScore> classes;
  double mean = 0.0;  ///< Mean of the class means.
};

struct EvalReport {
  std::string config_fingerprint;
  SplitSetting setting = SplitSetting::kSetting2;
  std::set<int> test_classes;
  std::vector<FoldReport> folds;
  std::map<int, ClassScore> classes;  ///< Episodes pooled over folds.
  double overall_mean = 0.0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// 1-way 1-shot evaluation of one fold. For every test class the support is the test slice
/// with the most class pixels; every test slice of another patient that contains the class is
/// a query. Classes present in fewer than two held-out patients are skipped with a warning.
FoldReport evaluate_fold(SliceCache& cache, const SplitPlan& split, const Predictor& predict,
                         std::vector<std::string>& warnings);

/// Pools fold reports into per-class and overall scores.
EvalReport make_report(const PipelineConfig& config, std::vector<FoldReport> folds, std::vector<std::string> warnings);

void write_loss_csv(const std::filesystem::path& path, const PhaseOutcome& outcome);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

// File-level drivers used by the CLI. Each writes into `out_dir` and returns the checkpoint
// (or report) path. `init` of std::nullopt starts from initial_encoder(config).
std::filesystem::path run_stage1(const PipelineConfig& config, const std::optional<std::filesystem::path>& init,
                                 const std::filesystem::path& out_dir);
std::filesystem::path run_stage2(const PipelineConfig& config, const std::optional<std::filesystem::path>& init,
                                 const std::filesystem::path& out_dir);
std::filesystem::path run_finetune(const PipelineConfig& config, const std::optional<std::filesystem::path>& init,
                                   const std::filesystem::path& out_dir);
std::filesystem::path run_evaluate(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                                   const std::filesystem::path& out_dir);

struct RunAllResult {
  EvalReport report;
  AuditReport audit;
  std::vector<std::filesystem::path> checkpoints;  ///< Final checkpoint of each fold.
};

/// Stage 1, Stage 2, fine-tuning and evaluation for every fold in data.folds. Writes
/// fold<k>/ subdirectories, eval_report.json, audit.jsonl and timing.json (wall-clock lives
/// apart from the report so the report stays reproducible).
RunAllResult run_all(const PipelineConfig& config, const std::filesystem::path& out_dir);

/// Channel L2 norm of the backbone features, min-max scaled to [0,1] and upscaled by nearest
/// neighbor to the input resolution.
Grid<double> feature_heatmap(const Encoder& encoder, const ImageSlice& image);

/// Writes `<slice_id>_features.png` for each slice; returns the paths.
std::vector<std::filesystem::path> export_features(const Encoder& encoder, const std::vector<ImageSlice>& images,
                                                   const std::filesystem::path& out_dir);

}  // namespace densemp
