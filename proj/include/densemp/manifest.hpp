#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "densemp/grid.hpp"

namespace densemp {

inline constexpr int kDefaultFolds = 5;

struct ManifestRecord {
  std::string slice_id;
  std::string path;  ///< As written in the manifest; may be relative to the manifest directory.
  std::string patient_id;
  int fold = 0;
  std::map<int, std::int64_t> class_pixel_counts;

  std::int64_t count(int class_id) const {
    auto it = class_pixel_counts.find(class_id);
    return it == class_pixel_counts.end() ? 0 : it->second;
  }
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  ///< Directory relative paths are resolved against.
  int n_folds = kDefaultFolds;

  std::filesystem::path image_path(const ManifestRecord& r) const;
  /// Ground-truth annotation map for a record: `<image stem>_label.png` next to the image.
  std::filesystem::path label_path(const ManifestRecord& r) const;
  const ManifestRecord& find(const std::string& slice_id) const;
};

/// Parses newline-delimited JSON. Blank lines are skipped. Throws ParseError (with the line
/// number) for malformed records and ValidationError for duplicate ids or bad folds.
DatasetManifest load_manifest(const std::filesystem::path& path, int n_folds = kDefaultFolds);
DatasetManifest parse_manifest(const std::string& text, int n_folds = kDefaultFolds);

void validate_manifest(const DatasetManifest& manifest);

std::string format_manifest_record(const ManifestRecord& r);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Loads the image named by `record`, resamples it to target_size x target_size (bilinear) and
/// min-max normalizes it. replicate_channels is recorded on the slice (1 or 3).
ImageSlice load_slice(const DatasetManifest& manifest, const ManifestRecord& record, int target_size,
                      int replicate_channels = 1);

/// Ground-truth labels resampled to target_size with nearest-neighbor.
LabelMap load_labels(const DatasetManifest& manifest, const ManifestRecord& record, int target_size);

/// Channel-replicated view of a slice as a (channels, H, W) plane-major buffer.
std::vector<double> replicate_planes(const ImageSlice& slice);

}  // namespace densemp
