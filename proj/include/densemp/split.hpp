#pragma once

#include <set>
#include <string>
#include <vector>

#include "densemp/manifest.hpp"

namespace densemp {

/// Setting 1: slices containing test classes stay in training, but only train-class labels
/// are ever exposed. Setting 2: every slice with any test-class pixel is excluded from training.
enum class SplitSetting { kSetting1 = 1, kSetting2 = 2 };

struct SplitPlan {
  SplitSetting setting = SplitSetting::kSetting2;
  int fold = 0;
  std::set<int> test_classes;
  std::vector<std::string> train_slice_ids;
  std::vector<std::string> test_slice_ids;
};

/// Patients whose records carry `fold` form the test side; the rest train. Test slices are the
/// held-out slices that contain at least one test class.
SplitPlan build_split(const DatasetManifest& manifest, int fold, SplitSetting setting, const std::set<int>& test_classes);

/// Classes whose labels may be used as supervision during training: every class present in the
/// manifest that is not a test class (0 = background is never a class).
std::set<int> train_classes(const DatasetManifest& manifest, const std::set<int>& test_classes);

/// Number of test-class pixels (from class_pixel_counts) in the given training slices.
std::int64_t count_test_class_pixels(const DatasetManifest& manifest, const std::vector<std::string>& slice_ids,
                                     const std::set<int>& test_classes);

}  // namespace densemp
