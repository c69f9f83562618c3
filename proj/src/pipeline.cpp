#include "densemp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "densemp/checkpoint.hpp"
#include "densemp/errors.hpp"
#include "densemp/fewshot.hpp"
#include "densemp/image_io.hpp"
#include "densemp/rng.hpp"
#include "densemp/stage1.hpp"

namespace densemp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kHeldoutEpisodes = 16;
constexpr std::uint64_t kHeldoutCounter = 1'000'000;
constexpr int kMaxEpisodeFailures = 100;

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Mean of the first and last tenth of a loss column.
void summarize_losses(PhaseOutcome& out) {
  if (out.loss_rows.empty()) return;
  const std::size_t n = out.loss_rows.size();
  const std::size_t w = std::max<std::size_t>(1, n / 10);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    head += out.loss_rows[i][1];
    tail += out.loss_rows[n - 1 - i][1];
  }
  out.metrics["loss_first"] = out.loss_rows.front()[1];
  out.metrics["loss_last"] = out.loss_rows.back()[1];
  out.metrics["loss_head_mean"] = head / static_cast<double>(w);
  out.metrics["loss_tail_mean"] = tail / static_cast<double>(w);
}

void require_manifest(const PipelineConfig& config) {
  if (config.data.manifest.empty()) throw ConfigError("data.manifest is not set");
}

DatasetManifest open_manifest(const PipelineConfig& config) {
  require_manifest(config);
  return load_manifest(config.data.manifest, config.data.n_folds);
}

Encoder open_encoder(const PipelineConfig& config, const std::optional<fs::path>& init) {
  if (!init) return initial_encoder(config);
  auto ckpt = load_checkpoint(*init);
  if (!(ckpt.config == config.encoder))
    throw ConfigError("checkpoint '" + init->string() + "' was built for a different encoder configuration");
  return Encoder(ckpt.config, std::move(ckpt.params));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

Mask indicator(const LabelMap& labels, int class_id) {
  Mask m(labels.height(), labels.width(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = labels[i] == class_id;
  return m;
}

std::int64_t label_count(const LabelMap& labels, int class_id) {
  return std::count(labels.values().begin(), labels.values().end(), class_id);
}

// Ground-truth train-class episodes for fine-tuning.
class GtEpisodeSampler {
 public:
  GtEpisodeSampler(SliceCache& cache, const SplitPlan& split, int min_fg) : cache_(cache) {
    for (int c : train_classes(cache.manifest(), split.test_classes)) {
      std::vector<std::string> pool;
      for (const auto& id : split.train_slice_ids)
        if (label_count(cache.labels(id), c) >= min_fg) pool.push_back(id);
      if (!pool.empty()) pools_.emplace_back(c, std::move(pool));
    }
  }

  bool empty() const { return pools_.empty(); }

  std::pair<FewShotEpisode, int> sample(Rng& rng) {
    const auto& [c, pool] = pools_[rng.index(pools_.size())];
    const std::string& s = pool[rng.index(pool.size())];
    const std::string& patient = cache_.manifest().find(s).patient_id;
    std::vector<const std::string*> others;
    for (const auto& id : pool)
      if (cache_.manifest().find(id).patient_id != patient) others.push_back(&id);
    if (others.empty())
      for (const auto& id : pool)
        if (id != s) others.push_back(&id);
    const std::string& q = others.empty() ? s : *others[rng.index(others.size())];
    FewShotEpisode ep;
    ep.support_image = cache_.image(s);
    ep.support_mask = cache_.class_mask(s, c);
    ep.query_image = cache_.image(q);
    ep.query_mask = cache_.class_mask(q, c);
    return {std::move(ep), c};
  }

 private:
  SliceCache& cache_;
  std::vector<std::pair<int, std::vector<std::string>>> pools_;
};

std::string fold_dir_name(int fold) { return "fold" + std::to_string(fold); }

}  // namespace

SliceCache::SliceCache(DatasetManifest manifest, int image_size, int channels)
    : manifest_(std::move(manifest)), image_size_(image_size), channels_(channels) {}

const ImageSlice& SliceCache::image(const std::string& slice_id) {
  auto it = images_.find(slice_id);
  if (it == images_.end())
    it = images_.emplace(slice_id, load_slice(manifest_, manifest_.find(slice_id), image_size_, channels_)).first;
  return it->second;
}

const LabelMap& SliceCache::labels(const std::string& slice_id) {
  auto it = labels_.find(slice_id);
  if (it == labels_.end())
    it = labels_.emplace(slice_id, load_labels(manifest_, manifest_.find(slice_id), image_size_)).first;
  return it->second;
}

const SuperpixelMap& SliceCache::superpixels(const std::string& slice_id, const FelzParams& params) {
  auto it = superpixels_.find(slice_id);
  if (it == superpixels_.end()) it = superpixels_.emplace(slice_id, felzenszwalb_segment(image(slice_id), params)).first;
  return it->second;
}

Mask SliceCache::class_mask(const std::string& slice_id, int class_id) { return indicator(labels(slice_id), class_id); }

void AuditLog::append_to(const fs::path& path) const {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open audit log '" + path.string() + "'");
  for (const auto& e : entries_) {
    json j{{"phase", e.phase}, {"iteration", e.iteration}, {"slices", e.slice_ids}};
    j["gt_class"] = e.gt_class ? json(*e.gt_class) : json(nullptr);
    out << j.dump() << '\n';
  }
}

std::vector<AuditEntry> AuditLog::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open audit log '" + path.string() + "'");
  std::vector<AuditEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      AuditEntry e;
      e.phase = j.at("phase").get<std::string>();
      e.iteration = j.at("iteration").get<int>();
      e.slice_ids = j.at("slices").get<std::vector<std::string>>();
      if (!j.at("gt_class").is_null()) e.gt_class = j.at("gt_class").get<int>();
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(line_no, std::string("audit log: ") + ex.what());
    }
  }
  return out;
}

AuditReport audit_test_class_exposure(const std::vector<AuditEntry>& entries, SliceCache& cache,
                                      SplitSetting setting, const std::set<int>& test_classes) {
  AuditReport report;
  report.entries = entries.size();
  for (const auto& e : entries) {
    for (const auto& id : e.slice_ids) {
      ++report.slice_reads;
      const auto& labels = cache.labels(id);
      if (setting == SplitSetting::kSetting2)
        for (int c : test_classes) report.test_class_pixels += label_count(labels, c);
      if (e.gt_class && test_classes.count(*e.gt_class)) report.test_class_pixels += label_count(labels, *e.gt_class);
    }
  }
  return report;
}

Encoder initial_encoder(const PipelineConfig& config) {
  Encoder fresh(config.encoder, derive_seed(config.seed, streams::kInit));
  return Encoder(config.encoder, round_to_float32(fresh.parameters()));
}

std::uint64_t fold_seed(const PipelineConfig& config) {
  return derive_seed(config.seed, 0x100, static_cast<std::uint64_t>(config.data.fold));
}

SplitPlan make_split(const PipelineConfig& config, const DatasetManifest& manifest) {
  return build_split(manifest, config.data.fold, config.data.setting, config.data.test_classes);
}

PhaseOutcome train_stage1(Encoder& encoder, const PipelineConfig& config, SliceCache& cache, const SplitPlan& split,
                          AuditLog* audit) {
  PhaseOutcome out;
  out.loss_columns = {"iteration", "loss", "global_loss", "dense_loss"};
  if (config.stage1.iterations == 0) return out;
  const auto& ids = split.train_slice_ids;
  if (ids.size() < 2 && config.stage1.queue_size == 0) throw ConfigError("stage1 needs at least 2 training images");
  Stage1Trainer trainer(encoder, config.stage1);
  const std::uint64_t root = fold_seed(config);
  const std::size_t B = std::min<std::size_t>(config.stage1.batch_images, ids.size());
  std::vector<std::size_t> order(ids.size());
  for (int it = 0; it < config.stage1.iterations; ++it) {
    Rng rng(derive_seed(root, streams::kStage1Batch, static_cast<std::uint64_t>(it)));
    std::iota(order.begin(), order.end(), 0);
    std::vector<ImageSlice> batch;
    AuditEntry entry{"stage1", it, {}, std::nullopt};
    for (std::size_t b = 0; b < B; ++b) {
      std::swap(order[b], order[b + rng.index(order.size() - b)]);
      batch.push_back(cache.image(ids[order[b]]));
      entry.slice_ids.push_back(ids[order[b]]);
    }
    const auto r = trainer.step(batch, derive_seed(root, streams::kStage1Views, static_cast<std::uint64_t>(it)), it);
    out.loss_rows.push_back({static_cast<double>(it), r.loss, r.global_loss, r.dense_loss});
    if (audit) audit->record(std::move(entry));
  }
  summarize_losses(out);
  return out;
}

FewShotEpisode sample_pseudo_episode(SliceCache& cache, const std::vector<std::string>& slice_ids,
                                     const Stage2Config& cfg, std::uint64_t seed) {
  if (slice_ids.empty()) throw ConfigError("no training slices for pseudo episodes");
  for (int attempt = 0; attempt <= kMaxEpisodeFailures; ++attempt) {
    Rng rng(derive_seed(seed, 0, static_cast<std::uint64_t>(attempt)));
    const std::string& id = slice_ids[rng.index(slice_ids.size())];
    try {
      const auto& sp = cache.superpixels(id, cfg.superpixels);
      const auto mask = select_pseudo_label(sp, cfg.min_fg, rng.next_u64());
      auto ep = build_episode(cache.image(id), mask, cfg.episode_transform, rng.next_u64());
      ep.seed = seed;
      return ep;
    } catch (const SelectionExhaustedError&) {
    } catch (const EpisodeConstructionError&) {
    }
  }
  throw DataError("more than " + std::to_string(kMaxEpisodeFailures) + " consecutive pseudo-episode failures");
}

double episodes_dice(const Encoder& encoder, const std::vector<FewShotEpisode>& episodes, const PrototypeConfig& cfg) {
  std::vector<double> scores;
  for (const auto& ep : episodes) {
    const auto protos = extract_prototypes(encoder.encode(ep.support_image), ep.support_mask, cfg);
    const auto pred = predict_mask(protos, encoder.encode(ep.query_image), cfg.alpha, ep.query_image.height(),
                                   ep.query_image.width());
    scores.push_back(dice(pred, ep.query_mask));
  }
  return mean_of(scores);
}

PhaseOutcome train_stage2(Encoder& encoder, const PipelineConfig& config, SliceCache& cache, const SplitPlan& split,
                          AuditLog* audit) {
  PhaseOutcome out;
  out.loss_columns = {"iteration", "loss", "query_dice"};
  if (config.stage2.iterations == 0) return out;
  const auto& ids = split.train_slice_ids;
  const std::uint64_t root = fold_seed(config);
  std::vector<FewShotEpisode> heldout;
  for (int h = 0; h < kHeldoutEpisodes; ++h)
    heldout.push_back(
        sample_pseudo_episode(cache, ids, config.stage2, derive_seed(root, streams::kStage2, kHeldoutCounter + h)));
  out.metrics["heldout_dice_start"] = episodes_dice(encoder, heldout, config.stage2.prototypes);

  EpisodeTrainer trainer(encoder, config.stage2);
  for (int it = 0; it < config.stage2.iterations; ++it) {
    const std::uint64_t seed = derive_seed(root, streams::kStage2, static_cast<std::uint64_t>(it));
    for (int attempt = 0;; ++attempt) {
      if (attempt > kMaxEpisodeFailures) throw DataError("stage2: repeated episode failures");
      auto ep = sample_pseudo_episode(cache, ids, config.stage2, derive_seed(seed, 1, attempt));
      try {
        const auto r = trainer.step(ep, it);
        out.loss_rows.push_back({static_cast<double>(it), r.loss, r.query_dice});
        if (audit) audit->record({"stage2", it, {ep.support_image.slice_id}, std::nullopt});
        break;
      } catch (const EpisodeSkipError&) {
      }
    }
  }
  out.metrics["heldout_dice_end"] = episodes_dice(encoder, heldout, config.stage2.prototypes);
  summarize_losses(out);
  return out;
}

PhaseOutcome train_finetune(Encoder& encoder, const PipelineConfig& config, SliceCache& cache, const SplitPlan& split,
                            AuditLog* audit) {
  PhaseOutcome out;
  out.loss_columns = {"iteration", "loss", "query_dice", "ground_truth"};
  if (config.finetune.iterations == 0) return out;
  const auto& ids = split.train_slice_ids;
  GtEpisodeSampler gt(cache, split, config.stage2.min_fg);
  if (gt.empty() && config.finetune.gt_probability > 0.0)
    throw ConfigError("finetune: no labeled train-class slices in the training split");

  Stage2Config cfg = config.stage2;
  cfg.lr = config.finetune.lr;
  cfg.iterations = config.finetune.iterations;
  EpisodeTrainer trainer(encoder, cfg);
  if (config.finetune.unfreeze == "last_block")
    trainer.set_trainable_prefixes(
        {"block" + std::to_string(config.encoder.block_channels.size() - 1) + "."});

  const std::uint64_t root = fold_seed(config);
  std::vector<FewShotEpisode> tracked;
  if (!gt.empty()) {
    for (int h = 0; h < kHeldoutEpisodes; ++h) {
      Rng rng(derive_seed(root, streams::kFinetune, kHeldoutCounter + h));
      tracked.push_back(gt.sample(rng).first);
    }
    out.metrics["train_class_dice_start"] = episodes_dice(encoder, tracked, cfg.prototypes);
  }

  int gt_steps = 0;
  for (int it = 0; it < config.finetune.iterations; ++it) {
    const std::uint64_t seed = derive_seed(root, streams::kFinetune, static_cast<std::uint64_t>(it));
    Rng rng(seed);
    const bool use_gt = !gt.empty() && rng.bernoulli(config.finetune.gt_probability);
    for (int attempt = 0;; ++attempt) {
      if (attempt > kMaxEpisodeFailures) throw DataError("finetune: repeated episode failures");
      FewShotEpisode ep;
      AuditEntry entry{"finetune", it, {}, std::nullopt};
      if (use_gt) {
        auto [e, c] = gt.sample(rng);
        ep = std::move(e);
        entry.slice_ids = {ep.support_image.slice_id, ep.query_image.slice_id};
        entry.gt_class = c;
      } else {
        ep = sample_pseudo_episode(cache, ids, cfg, derive_seed(seed, 1, attempt));
        entry.slice_ids = {ep.support_image.slice_id};
      }
      try {
        const auto r = trainer.step(ep, it);
        out.loss_rows.push_back({static_cast<double>(it), r.loss, r.query_dice, use_gt ? 1.0 : 0.0});
        gt_steps += use_gt;
        if (audit) audit->record(std::move(entry));
        break;
      } catch (const EpisodeSkipError&) {
      }
    }
  }
  out.metrics["ground_truth_steps"] = gt_steps;
  if (!tracked.empty()) out.metrics["train_class_dice_end"] = episodes_dice(encoder, tracked, cfg.prototypes);
  summarize_losses(out);
  return out;
}

Predictor model_predictor(const Encoder& encoder, const PrototypeConfig& cfg) {
  return [&encoder, cfg](const EvalEpisode& ep) {
    const auto protos = extract_prototypes(encoder.encode(ep.support), ep.support_mask, cfg);
    return predict_mask(protos, encoder.encode(ep.query), cfg.alpha, ep.query.height(), ep.query.width());
  };
}

FoldReport evaluate_fold(SliceCache& cache, const SplitPlan& split, const Predictor& predict,
                         std::vector<std::string>& warnings) {
  FoldReport report;
  report.fold = split.fold;
  const auto& manifest = cache.manifest();
  std::vector<double> class_means;
  for (int c : split.test_classes) {
    std::vector<std::string> candidates;
    std::set<std::string> patients;
    for (const auto& id : split.test_slice_ids)
      if (label_count(cache.labels(id), c) > 0) {
        candidates.push_back(id);
        patients.insert(manifest.find(id).patient_id);
      }
    if (patients.size() < 2) {
      warnings.push_back("fold " + std::to_string(split.fold) + ": class " + std::to_string(c) + " appears in " +
                         std::to_string(patients.size()) + " held-out patient(s); skipped");
      continue;
    }
    const std::string* support = &candidates.front();
    for (const auto& id : candidates)
      if (label_count(cache.labels(id), c) > label_count(cache.labels(*support), c)) support = &id;
    const std::string& support_patient = manifest.find(*support).patient_id;
    const ImageSlice& s_img = cache.image(*support);
    const Mask s_mask = cache.class_mask(*support, c);

    ClassScore score;
    score.support_slice = *support;
    for (const auto& q : candidates) {
      if (manifest.find(q).patient_id == support_patient) continue;
      const Mask q_mask = cache.class_mask(q, c);
      const Mask pred = predict({s_img, s_mask, cache.image(q), q_mask, c});
      score.dice.push_back(dice(pred, q_mask));
    }
    score.mean = mean_of(score.dice);
    score.std = std_of(score.dice);
    class_means.push_back(score.mean);
    report.classes.emplace(c, std::move(score));
  }
  report.mean = mean_of(class_means);
  return report;
}

EvalReport make_report(const PipelineConfig& config, std::vector<FoldReport> folds, std::vector<std::string> warnings) {
  EvalReport r;
  r.config_fingerprint = config_fingerprint(config);
  r.setting = config.data.setting;
  r.test_classes = config.data.test_classes;
  r.folds = std::move(folds);
  r.warnings = std::move(warnings);
  for (const auto& f : r.folds)
    for (const auto& [c, s] : f.classes) {
      auto& pooled = r.classes[c];
      pooled.dice.insert(pooled.dice.end(), s.dice.begin(), s.dice.end());
    }
  std::vector<double> means;
  for (auto& [c, s] : r.classes) {
    s.mean = mean_of(s.dice);
    s.std = std_of(s.dice);
    means.push_back(s.mean);
  }
  r.overall_mean = mean_of(means);
  return r;
}

json EvalReport::to_json() const {
  auto class_json = [](const ClassScore& s, bool details) {
    json j{{"mean", s.mean}, {"std", s.std}, {"n_episodes", s.dice.size()}};
    if (details) {
      j["support_slice"] = s.support_slice;
      j["dice"] = s.dice;
    }
    return j;
  };
  json j;
  j["config_fingerprint"] = config_fingerprint;
  j["setting"] = static_cast<int>(setting);
  j["test_classes"] = test_classes;
  j["folds"] = json::array();
  for (const auto& f : folds) {
    json fj{{"fold", f.fold}, {"mean", f.mean}, {"classes", json::object()}};
    for (const auto& [c, s] : f.classes) fj["classes"][std::to_string(c)] = class_json(s, true);
    j["folds"].push_back(std::move(fj));
  }
  j["classes"] = json::object();
  for (const auto& [c, s] : classes) j["classes"][std::to_string(c)] = class_json(s, false);
  j["overall_mean"] = overall_mean;
  j["warnings"] = warnings;
  return j;
}

void write_loss_csv(const fs::path& path, const PhaseOutcome& outcome) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < outcome.loss_columns.size(); ++i) out << (i ? "," : "") << outcome.loss_columns[i];
  out << '\n';
  char buf[32];
  for (const auto& row : outcome.loss_rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

namespace {

enum class Phase { kStage1, kStage2, kFinetune };

fs::path run_phase(Phase phase, const PipelineConfig& config, const std::optional<fs::path>& init,
                   const fs::path& out_dir) {
  SliceCache cache(open_manifest(config), config.data.image_size, config.data.replicate_channels);
  const auto split = make_split(config, cache.manifest());
  Encoder encoder = open_encoder(config, init);
  ensure_dir(out_dir);
  AuditLog audit;
  PhaseOutcome outcome;
  std::string name;
  switch (phase) {
    case Phase::kStage1:
      outcome = train_stage1(encoder, config, cache, split, &audit);
      name = "stage1";
      break;
    case Phase::kStage2:
      outcome = train_stage2(encoder, config, cache, split, &audit);
      name = "stage2";
      break;
    case Phase::kFinetune:
      outcome = train_finetune(encoder, config, cache, split, &audit);
      name = "finetune";
      break;
  }
  const fs::path ckpt = out_dir / (name + ".ckpt");
  save_checkpoint(ckpt, encoder);
  write_loss_csv(out_dir / (name + "_loss.csv"), outcome);
  write_json(out_dir / (name + "_metrics.json"), outcome.metrics);
  audit.append_to(out_dir / "audit.jsonl");
  return ckpt;
}

}  // namespace

fs::path run_stage1(const PipelineConfig& config, const std::optional<fs::path>& init, const fs::path& out_dir) {
  return run_phase(Phase::kStage1, config, init, out_dir);
}

fs::path run_stage2(const PipelineConfig& config, const std::optional<fs::path>& init, const fs::path& out_dir) {
  return run_phase(Phase::kStage2, config, init, out_dir);
}

fs::path run_finetune(const PipelineConfig& config, const std::optional<fs::path>& init, const fs::path& out_dir) {
  return run_phase(Phase::kFinetune, config, init, out_dir);
}

fs::path run_evaluate(const PipelineConfig& config, const fs::path& checkpoint, const fs::path& out_dir) {
  SliceCache cache(open_manifest(config), config.data.image_size, config.data.replicate_channels);
  const auto split = make_split(config, cache.manifest());
  if (split.test_slice_ids.empty()) throw ConfigError("evaluate: the test split is empty");
  const Encoder encoder = open_encoder(config, checkpoint);
  std::vector<std::string> warnings;
  auto fold = evaluate_fold(cache, split, model_predictor(encoder, config.stage2.prototypes), warnings);
  const auto report = make_report(config, {std::move(fold)}, std::move(warnings));
  ensure_dir(out_dir);
  const fs::path path = out_dir / "eval_report.json";
  write_json(path, report.to_json());
  return path;
}

RunAllResult run_all(const PipelineConfig& config, const fs::path& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  ensure_dir(out_dir);
  const fs::path audit_path = out_dir / "audit.jsonl";
  fs::remove(audit_path);
  SliceCache cache(open_manifest(config), config.data.image_size, config.data.replicate_channels);

  RunAllResult result;
  std::vector<FoldReport> folds;
  std::vector<std::string> warnings;
  std::vector<AuditEntry> all_entries;
  json timing{{"folds", json::object()}};
  for (int f : config.data.folds) {
    PipelineConfig cfg = config;
    cfg.data.fold = f;
    const auto split = make_split(cfg, cache.manifest());
    if (split.test_slice_ids.empty()) throw ConfigError("fold " + std::to_string(f) + ": the test split is empty");
    const fs::path dir = out_dir / fold_dir_name(f);
    ensure_dir(dir);
    Encoder encoder = initial_encoder(cfg);
    AuditLog audit;
    json fold_timing;

    auto phase = [&](const char* name, auto train) {
      const auto t0 = std::chrono::steady_clock::now();
      const PhaseOutcome outcome = train(encoder, cfg, cache, split, &audit);
      // Round exactly as a save/load round trip would, so chained CLI runs match.
      encoder.parameters() = round_to_float32(encoder.parameters());
      save_checkpoint(dir / (std::string(name) + ".ckpt"), encoder);
      write_loss_csv(dir / (std::string(name) + "_loss.csv"), outcome);
      write_json(dir / (std::string(name) + "_metrics.json"), outcome.metrics);
      fold_timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    phase("stage1", train_stage1);
    phase("stage2", train_stage2);
    phase("finetune", train_finetune);
    result.checkpoints.push_back(dir / "finetune.ckpt");

    const auto t0 = std::chrono::steady_clock::now();
    folds.push_back(evaluate_fold(cache, split, model_predictor(encoder, cfg.stage2.prototypes), warnings));
    fold_timing["evaluate"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing["folds"][fold_dir_name(f)] = fold_timing;

    audit.append_to(audit_path);
    const auto fold_audit =
        audit_test_class_exposure(audit.entries(), cache, cfg.data.setting, cfg.data.test_classes);
    result.audit.entries += fold_audit.entries;
    result.audit.slice_reads += fold_audit.slice_reads;
    result.audit.test_class_pixels += fold_audit.test_class_pixels;
  }
  result.report = make_report(config, std::move(folds), std::move(warnings));
  write_json(out_dir / "eval_report.json", result.report.to_json());
  write_json(out_dir / "audit_summary.json", {{"entries", result.audit.entries},
                                              {"slice_reads", result.audit.slice_reads},
                                              {"test_class_pixels", result.audit.test_class_pixels}});
  timing["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_json(out_dir / "timing.json", timing);
  return result;
}

Grid<double> feature_heatmap(const Encoder& encoder, const ImageSlice& image) {
  const FeatureMap f = encoder.encode(image);
  const int C = f.shape[0], h = f.shape[1], w = f.shape[2];
  Grid<double> norms(h, w, 0.0);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < h * w; ++i) {
      const double v = f.data[static_cast<std::size_t>(c) * h * w + i];
      norms[i] += v * v;
    }
  for (auto& v : norms.values()) v = std::sqrt(v);
  const Grid<double> scaled = minmax_normalize(norms);
  const int factor = image.height() / h;
  Grid<double> out(h * factor, w * factor);
  for (int r = 0; r < out.height(); ++r)
    for (int c = 0; c < out.width(); ++c) out(r, c) = scaled(r / factor, c / factor);
  return out;
}

std::vector<fs::path> export_features(const Encoder& encoder, const std::vector<ImageSlice>& images,
                                      const fs::path& out_dir) {
  ensure_dir(out_dir);
  std::vector<fs::path> paths;
  for (const auto& img : images) {
    const fs::path p = out_dir / (img.slice_id + "_features.png");
    write_png_unit(p, feature_heatmap(encoder, img));
    paths.push_back(p);
  }
  return paths;
}

}  // namespace densemp
