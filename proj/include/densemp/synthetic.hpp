#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "densemp/grid.hpp"
#include "densemp/manifest.hpp"

namespace densemp {

/// Abdominal-like phantom: a textured body ellipse with four labelled organs (1 and 2 in the
/// upper slices, 3 and 4 in the lower ones, overlapping in the middle) plus unlabelled
/// distractor structures. Each patient gets its own gain, offset, organ placement and texture.
struct SyntheticConfig {
  int n_patients = 10;
  int slices_per_patient = 10;
  int image_size = 32;  ///< Stored resolution; the pipeline resamples on load.
  int n_folds = kDefaultFolds;
  std::string format = "png";  ///< "png" (16-bit) or "raw" (float grid).
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kSyntheticClasses = 4;

struct SyntheticSlice {
  Grid<double> image;  ///< [0, 1]
  LabelMap labels;     ///< 0 = background, 1..4 = organs.
};

/// One slice of one patient. Pure function of (config.seed, patient, slice, image_size).
SyntheticSlice synthesize_slice(const SyntheticConfig& config, int patient, int slice);

/// Writes images, `<stem>_label.png` label maps and `manifest.jsonl` under `out_dir`. Patients
/// are assigned to folds round-robin. Returns the manifest.
DatasetManifest generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_dir);

}  // namespace densemp
