#include "densemp/split.hpp"

namespace densemp {

SplitPlan build_split(const DatasetManifest& manifest, int fold, SplitSetting setting, const std::set<int>& test_classes) {
  if (fold < 0 || fold >= manifest.n_folds) throw ConfigError("fold " + std::to_string(fold) + " out of range");
  if (test_classes.empty()) throw ConfigError("test_classes must be non-empty");
  if (setting != SplitSetting::kSetting1 && setting != SplitSetting::kSetting2)
    throw ConfigError("setting must be 1 or 2");

  SplitPlan plan;
  plan.setting = setting;
  plan.fold = fold;
  plan.test_classes = test_classes;
  for (const auto& r : manifest.records) {
    bool has_test_class = false;
    for (int c : test_classes) has_test_class |= r.count(c) > 0;
    if (r.fold == fold) {
      if (has_test_class) plan.test_slice_ids.push_back(r.slice_id);
    } else if (setting == SplitSetting::kSetting1 || !has_test_class) {
      plan.train_slice_ids.push_back(r.slice_id);
    }
  }
  if (plan.train_slice_ids.empty())
    throw ConfigError("split leaves no training slices (fold " + std::to_string(fold) + ", setting " +
                      std::to_string(static_cast<int>(setting)) + ")");
  return plan;
}

std::set<int> train_classes(const DatasetManifest& manifest, const std::set<int>& test_classes) {
  std::set<int> out;
  for (const auto& r : manifest.records)
    for (const auto& [cls, n] : r.class_pixel_counts)
      if (cls != 0 && !test_classes.contains(cls)) out.insert(cls);
  return out;
}

std::int64_t count_test_class_pixels(const DatasetManifest& manifest, const std::vector<std::string>& slice_ids,
                                     const std::set<int>& test_classes) {
  std::int64_t total = 0;
  for (const auto& id : slice_ids) {
    const auto& r = manifest.find(id);
    for (int c : test_classes) total += r.count(c);
  }
  return total;
}

}  // namespace densemp
