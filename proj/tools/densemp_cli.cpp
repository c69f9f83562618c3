#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "densemp/checkpoint.hpp"
#include "densemp/config.hpp"
#include "densemp/errors.hpp"
#include "densemp/image_io.hpp"
#include "densemp/pipeline.hpp"
#include "densemp/synthetic.hpp"

namespace fs = std::filesystem;
using densemp::PipelineConfig;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON configuration file");
  cmd->add_option("--seed", o.seed, "Root seed (overrides the config)");
  cmd->add_option("--out", o.out, "Output directory (overrides output_dir)");
  cmd->add_option("--override", o.overrides, "Dot-path override key=value (repeatable)");
}

PipelineConfig resolve(const CommonOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw densemp::ConfigError("cannot open config '" + o.config + "'");
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw densemp::ConfigError("config '" + o.config + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& a : o.overrides) densemp::apply_override(doc, a);
  if (o.seed) doc["seed"] = *o.seed;
  if (!o.out.empty()) doc["output_dir"] = o.out;
  return densemp::config_from_json(doc);
}

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage dense pre-training for few-shot segmentation"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string checkpoint;

  densemp::SyntheticConfig synth;
  auto* gen = app.add_subcommand("gen-synthetic", "Generate the synthetic phantom dataset");
  add_common(gen, common);
  gen->add_option("--patients", synth.n_patients, "Number of patients");
  gen->add_option("--slices", synth.slices_per_patient, "Slices per patient");
  gen->add_option("--size", synth.image_size, "Image side in pixels");
  gen->add_option("--folds", synth.n_folds, "Number of cross-validation folds");
  gen->add_option("--format", synth.format, "png or raw");

  auto* s1 = app.add_subcommand("pretrain-stage1", "Dense contrastive pre-training");
  add_common(s1, common);
  s1->add_option("--init", checkpoint, "Start from this checkpoint instead of a random encoder");

  auto* s2 = app.add_subcommand("pretrain-stage2", "Superpixel episodic pre-training");
  add_common(s2, common);
  s2->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();

  auto* ft = app.add_subcommand("finetune", "Episodic fine-tuning with ground-truth and pseudo masks");
  add_common(ft, common);
  ft->add_option("--checkpoint", checkpoint, "Stage-2 checkpoint")->required();

  auto* ev = app.add_subcommand("evaluate", "1-way 1-shot evaluation on the held-out fold");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();

  std::vector<std::string> images;
  int limit = 8;
  auto* ex = app.add_subcommand("export-features", "Write feature-norm heatmaps");
  add_common(ex, common);
  ex->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
  ex->add_option("--images", images, "Image files (default: the first --limit manifest slices)");
  ex->add_option("--limit", limit, "Manifest slices to export when --images is absent");

  auto* all = app.add_subcommand("run-all", "Stage 1, Stage 2, fine-tuning and evaluation for every configured fold");
  add_common(all, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) {
      if (common.seed) synth.seed = *common.seed;
      const fs::path out = common.out.empty() ? fs::path("synthetic") : fs::path(common.out);
      densemp::generate_synthetic(synth, out);
      std::cout << (out / "manifest.jsonl").string() << '\n';
      return kOk;
    }
    const PipelineConfig config = resolve(common);
    const fs::path out = config.output_dir;
    if (s1->parsed()) {
      std::cout << densemp::run_stage1(config, optional_path(checkpoint), out).string() << '\n';
    } else if (s2->parsed()) {
      std::cout << densemp::run_stage2(config, fs::path(checkpoint), out).string() << '\n';
    } else if (ft->parsed()) {
      std::cout << densemp::run_finetune(config, fs::path(checkpoint), out).string() << '\n';
    } else if (ev->parsed()) {
      const auto path = densemp::run_evaluate(config, checkpoint, out);
      std::cout << path.string() << '\n';
    } else if (ex->parsed()) {
      const auto encoder = densemp::load_encoder(checkpoint);
      std::vector<densemp::ImageSlice> slices;
      if (!images.empty()) {
        for (const auto& p : images) {
          auto raw = densemp::read_intensity(p);
          auto pix = densemp::minmax_normalize(
              densemp::resize_bilinear(raw, config.data.image_size, config.data.image_size));
          slices.push_back({std::move(pix), fs::path(p).stem().string(), config.data.replicate_channels});
        }
      } else {
        if (config.data.manifest.empty()) throw densemp::ConfigError("export-features needs --images or data.manifest");
        densemp::SliceCache cache(densemp::load_manifest(config.data.manifest, config.data.n_folds),
                                  config.data.image_size, config.data.replicate_channels);
        for (const auto& r : cache.manifest().records) {
          if (static_cast<int>(slices.size()) >= limit) break;
          slices.push_back(cache.image(r.slice_id));
        }
      }
      for (const auto& p : densemp::export_features(encoder, slices, out)) std::cout << p.string() << '\n';
    } else if (all->parsed()) {
      const auto result = densemp::run_all(config, out);
      std::cout << "overall mean Dice " << result.report.overall_mean << '\n';
      std::cout << "audit: " << result.audit.entries << " batches, " << result.audit.test_class_pixels
                << " test-class pixels\n";
      for (const auto& w : result.report.warnings) std::cerr << "warning: " << w << '\n';
    }
    return kOk;
  } catch (const densemp::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const densemp::ArgumentError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const densemp::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const densemp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
