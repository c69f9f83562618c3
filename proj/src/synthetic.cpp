#include "densemp/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "densemp/errors.hpp"
#include "densemp/image_io.hpp"
#include "densemp/rng.hpp"

namespace densemp {

namespace {

struct OrganShape {
  int label;
  double cu, cv;  // center, fraction of the side
  double ru, rv;  // radii, fraction of the side
  double z0, z1;  // axial extent in [0, 1]
  double intensity;
};

// Drawn in this order; later organs overwrite earlier ones.
constexpr std::array<OrganShape, 4> kOrgans{{
    {1, 0.33, 0.40, 0.17, 0.13, 0.00, 0.62, 0.56},
    {2, 0.70, 0.38, 0.11, 0.12, 0.00, 0.62, 0.70},
    {3, 0.68, 0.70, 0.11, 0.12, 0.38, 1.00, 0.64},
    {4, 0.32, 0.70, 0.11, 0.12, 0.38, 1.00, 0.62},
}};

struct PatientAnatomy {
  double gain, offset;
  std::array<double, 4> du, dv, size;
  // Low-frequency texture: sum of plane waves.
  std::array<double, 3> wave_fu, wave_fv, wave_phase;
  double spine_u, vessel_u, vessel_v;
};

PatientAnatomy patient_anatomy(std::uint64_t seed, int patient) {
  Rng rng(derive_seed(seed, streams::kSynthetic, static_cast<std::uint64_t>(patient)));
  PatientAnatomy a{};
  a.gain = rng.uniform(0.8, 1.2);
  a.offset = rng.uniform(-0.05, 0.05);
  for (int o = 0; o < 4; ++o) {
    a.du[o] = rng.uniform(-0.02, 0.02);
    a.dv[o] = rng.uniform(-0.02, 0.02);
    a.size[o] = rng.uniform(0.94, 1.06);
  }
  for (int w = 0; w < 3; ++w) {
    a.wave_fu[w] = rng.uniform(2.0, 6.0);
    a.wave_fv[w] = rng.uniform(2.0, 6.0);
    a.wave_phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  a.spine_u = 0.5 + rng.uniform(-0.02, 0.02);
  a.vessel_u = 0.5 + rng.uniform(-0.05, 0.05);
  a.vessel_v = 0.55 + rng.uniform(-0.03, 0.03);
  return a;
}

// Cross-section scale of an organ at axial position t; never below 0.85 inside the extent.
double cross_section(const OrganShape& o, double t) {
  if (t < o.z0 || t > o.z1) return 0.0;
  const double mid = 0.5 * (o.z0 + o.z1), half = 0.5 * (o.z1 - o.z0);
  const double r = (t - mid) / half;
  return 0.85 + 0.15 * std::sqrt(std::max(0.0, 1.0 - r * r));
}

double ellipse_radius(double u, double v, double cu, double cv, double ru, double rv) {
  const double x = (u - cu) / ru, y = (v - cv) / rv;
  return std::sqrt(x * x + y * y);
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n_patients < 1) throw ConfigError("synthetic n_patients must be >= 1");
  if (slices_per_patient < 1) throw ConfigError("synthetic slices_per_patient must be >= 1");
  if (image_size < 16) throw ConfigError("synthetic image_size must be >= 16");
  if (n_folds < 1) throw ConfigError("synthetic n_folds must be >= 1");
  if (format != "png" && format != "raw") throw ConfigError("synthetic format must be 'png' or 'raw'");
}

SyntheticSlice synthesize_slice(const SyntheticConfig& config, int patient, int slice) {
  const int n = config.image_size;
  const PatientAnatomy a = patient_anatomy(config.seed, patient);
  const double t = (slice + 0.5) / config.slices_per_patient;
  Rng noise(derive_seed(config.seed, streams::kSynthetic,
                        (static_cast<std::uint64_t>(patient) << 20) + static_cast<std::uint64_t>(slice) + 1));

  SyntheticSlice out{Grid<double>(n, n, 0.0), LabelMap(n, n, 0)};
  std::array<double, 4> scale{};
  for (int o = 0; o < 4; ++o) scale[o] = cross_section(kOrgans[o], t) * a.size[o];

  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double u = (c + 0.5) / n, v = (r + 0.5) / n;
      double texture = 0.0;
      for (int w = 0; w < 3; ++w)
        texture += std::sin(2.0 * std::numbers::pi * (a.wave_fu[w] * u + a.wave_fv[w] * v) + a.wave_phase[w]);
      texture *= 0.015;

      double value = 0.02;
      int label = 0;
      if (ellipse_radius(u, v, 0.5, 0.5, 0.46, 0.40) <= 1.0) {
        value = 0.30 + texture;
        // Distractors: a bright spine and a vessel, both unlabelled.
        if (ellipse_radius(u, v, a.spine_u, 0.82, 0.06, 0.05) <= 1.0) value = 0.90;
        if (ellipse_radius(u, v, a.vessel_u, a.vessel_v, 0.035, 0.035) <= 1.0) value = 0.80;
        for (int o = 0; o < 4; ++o) {
          if (scale[o] <= 0.0) continue;
          const auto& s = kOrgans[o];
          const double rho = ellipse_radius(u, v, s.cu + a.du[o], s.cv + a.dv[o], s.ru * scale[o], s.rv * scale[o]);
          if (rho > 1.0) continue;
          label = s.label;
          if (s.label >= 3) {
            // Bright cortex around a darker medulla.
            value = rho > 0.6 ? s.intensity + 0.12 : s.intensity - 0.10;
          } else {
            value = s.intensity + 2.0 * texture;
          }
        }
      }
      value = a.gain * value + a.offset + noise.normal(0.0, 0.02);
      out.image(r, c) = std::clamp(value, 0.0, 1.0);
      out.labels(r, c) = label;
    }
  }
  return out;
}

DatasetManifest generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create '" + (out_dir / "images").string() + "': " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  manifest.n_folds = config.n_folds;
  for (int p = 0; p < config.n_patients; ++p) {
    char patient_id[16];
    std::snprintf(patient_id, sizeof patient_id, "P%03d", p);
    for (int s = 0; s < config.slices_per_patient; ++s) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%s_S%02d", patient_id, s);
      const auto slice = synthesize_slice(config, p, s);
      const std::string rel = std::string("images/") + stem + (config.format == "png" ? ".png" : ".raw");
      if (config.format == "png") {
        Grid<std::uint16_t> q(slice.image.height(), slice.image.width());
        for (std::size_t i = 0; i < q.size(); ++i)
          q[i] = static_cast<std::uint16_t>(std::lround(slice.image[i] * 65535.0));
        write_png_u16(out_dir / rel, q);
      } else {
        write_raw_float(out_dir / rel, slice.image);
      }
      Grid<std::uint8_t> labels(slice.labels.height(), slice.labels.width());
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(slice.labels[i]);
      write_png_u8(out_dir / "images" / (std::string(stem) + "_label.png"), labels);

      ManifestRecord rec;
      rec.slice_id = stem;
      rec.path = rel;
      rec.patient_id = patient_id;
      rec.fold = p % config.n_folds;
      for (int k = 1; k <= kSyntheticClasses; ++k) rec.class_pixel_counts[k] = 0;
      for (auto l : slice.labels.values())
        if (l > 0) ++rec.class_pixel_counts[l];
      manifest.records.push_back(std::move(rec));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace densemp
