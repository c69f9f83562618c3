#include "densemp/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "densemp/image_io.hpp"

namespace densemp {
namespace {

using nlohmann::json;

const std::set<std::string>& manifest_fields() {
  static const std::set<std::string> fields{"slice_id", "path", "patient_id", "fold", "class_pixel_counts"};
  return fields;
}

ManifestRecord parse_record(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "record is not a JSON object");
  for (const auto& [key, _] : j.items())
    if (!manifest_fields().contains(key)) throw ParseError(line_no, "unknown field '" + key + "'");
  for (const auto& key : manifest_fields())
    if (!j.contains(key)) throw ParseError(line_no, "missing field '" + key + "'");

  ManifestRecord r;
  if (!j["slice_id"].is_string() || !j["path"].is_string() || !j["patient_id"].is_string())
    throw ParseError(line_no, "slice_id, path and patient_id must be strings");
  if (!j["fold"].is_number_integer()) throw ParseError(line_no, "fold must be an integer");
  if (!j["class_pixel_counts"].is_object()) throw ParseError(line_no, "class_pixel_counts must be an object");
  r.slice_id = j["slice_id"].get<std::string>();
  r.path = j["path"].get<std::string>();
  r.patient_id = j["patient_id"].get<std::string>();
  r.fold = j["fold"].get<int>();
  for (const auto& [key, value] : j["class_pixel_counts"].items()) {
    int cls = 0;
    std::size_t used = 0;
    try {
      cls = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size()) throw ParseError(line_no, "class id '" + key + "' is not an integer");
    if (!value.is_number_integer()) throw ParseError(line_no, "pixel count for class " + key + " is not an integer");
    r.class_pixel_counts[cls] = value.get<std::int64_t>();
  }
  if (r.slice_id.empty()) throw ParseError(line_no, "empty slice_id");
  return r;
}

}  // namespace

std::filesystem::path DatasetManifest::image_path(const ManifestRecord& r) const {
  std::filesystem::path p(r.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::filesystem::path DatasetManifest::label_path(const ManifestRecord& r) const {
  auto p = image_path(r);
  return p.parent_path() / (p.stem().string() + "_label.png");
}

const ManifestRecord& DatasetManifest::find(const std::string& slice_id) const {
  auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.slice_id == slice_id; });
  if (it == records.end()) throw ArgumentError("unknown slice_id " + slice_id);
  return *it;
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (!seen.insert(r.slice_id).second) throw ValidationError("duplicate slice_id '" + r.slice_id + "'");
    if (r.fold < 0 || r.fold >= manifest.n_folds)
      throw ValidationError("slice '" + r.slice_id + "': fold " + std::to_string(r.fold) + " outside [0, " +
                            std::to_string(manifest.n_folds) + ")");
    for (const auto& [cls, n] : r.class_pixel_counts)
      if (n < 0) throw ValidationError("slice '" + r.slice_id + "': negative pixel count for class " + std::to_string(cls));
  }
}

DatasetManifest parse_manifest(const std::string& text, int n_folds) {
  if (n_folds < 1) throw ArgumentError("n_folds must be positive");
  DatasetManifest m;
  m.n_folds = n_folds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    m.records.push_back(parse_record(line, line_no));
  }
  validate_manifest(m);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, int n_folds) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_manifest(ss.str(), n_folds);
  m.base_dir = path.parent_path();
  return m;
}

std::string format_manifest_record(const ManifestRecord& r) {
  json counts = json::object();
  for (const auto& [cls, n] : r.class_pixel_counts) counts[std::to_string(cls)] = n;
  json j = json::object();
  j["slice_id"] = r.slice_id;
  j["path"] = r.path;
  j["patient_id"] = r.patient_id;
  j["fold"] = r.fold;
  j["class_pixel_counts"] = counts;
  return j.dump();
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : manifest.records) out << format_manifest_record(r) << '\n';
}

ImageSlice load_slice(const DatasetManifest& manifest, const ManifestRecord& record, int target_size,
                      int replicate_channels) {
  if (target_size <= 0) throw ArgumentError("target_size must be positive");
  if (replicate_channels != 1 && replicate_channels != 3) throw ArgumentError("replicate_channels must be 1 or 3");
  auto raw = read_intensity(manifest.image_path(record));
  ImageSlice s;
  s.pixels = minmax_normalize(resize_bilinear(raw, target_size, target_size));
  s.slice_id = record.slice_id;
  s.channels = replicate_channels;
  return s;
}

LabelMap load_labels(const DatasetManifest& manifest, const ManifestRecord& record, int target_size) {
  auto labels = read_label_png(manifest.label_path(record));
  if (labels.height() == target_size && labels.width() == target_size) return labels;
  LabelMap out(target_size, target_size);
  const double sy = static_cast<double>(labels.height()) / target_size;
  const double sx = static_cast<double>(labels.width()) / target_size;
  for (int r = 0; r < target_size; ++r) {
    const int y = std::min(static_cast<int>(std::floor((r + 0.5) * sy)), labels.height() - 1);
    for (int c = 0; c < target_size; ++c) {
      const int x = std::min(static_cast<int>(std::floor((c + 0.5) * sx)), labels.width() - 1);
      out(r, c) = labels(y, x);
    }
  }
  return out;
}

std::vector<double> replicate_planes(const ImageSlice& slice) {
  std::vector<double> out;
  out.reserve(slice.pixels.size() * slice.channels);
  for (int ch = 0; ch < slice.channels; ++ch)
    out.insert(out.end(), slice.pixels.storage().begin(), slice.pixels.storage().end());
  return out;
}

}  // namespace densemp
