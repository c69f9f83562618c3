#include "densemp/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "densemp/rng.hpp"

namespace densemp {
namespace {

void check_interval(const Interval& iv, const char* name) {
  if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || iv.lo > iv.hi)
    throw ArgumentError(std::string("transform range '") + name + "' must be a finite interval with lo <= hi");
}

// Exact values at multiples of 90 degrees so right-angle rotations permute pixel centers.
std::pair<double, double> cos_sin_deg(double deg) {
  const double quarter = deg / 90.0;
  if (quarter == std::round(quarter)) {
    const long q = ((static_cast<long>(std::round(quarter)) % 4) + 4) % 4;
    static constexpr double c[4] = {1.0, 0.0, -1.0, 0.0};
    static constexpr double s[4] = {0.0, 1.0, 0.0, -1.0};
    return {c[q], s[q]};
  }
  const double rad = deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

// Maps an output pixel center back to source coordinates.
struct InverseMap {
  double cx, cy, a, b, c, d, tx, ty;

  InverseMap(const GeometricTransform& t, int height, int width)
      : cx((width - 1) / 2.0), cy((height - 1) / 2.0), tx(t.tx), ty(t.ty) {
    // inverse of s*R(theta) is R(-theta)/s
    const auto [cs, sn] = cos_sin_deg(t.angle_deg);
    a = cs / t.scale;
    b = sn / t.scale;
    c = -sn / t.scale;
    d = cs / t.scale;
  }

  std::pair<double, double> operator()(int r, int col) const {
    const double x = col - cx - tx;
    const double y = r - cy - ty;
    return {cx + a * x + b * y, cy + c * x + d * y};
  }
};

}  // namespace

TransformSpec TransformSpec::standard() {
  TransformSpec s;
  s.rotation_deg = {-15.0, 15.0};
  s.translation = {-0.06, 0.06};
  s.scale = {0.9, 1.1};
  s.gamma = {0.7, 1.4};
  s.brightness = {-0.1, 0.1};
  s.noise_std = 0.02;
  return s;
}

void TransformSpec::validate() const {
  check_interval(rotation_deg, "rotation");
  check_interval(translation, "translation");
  check_interval(scale, "scale");
  check_interval(gamma, "gamma");
  check_interval(brightness, "brightness");
  if (scale.lo <= 0.0) throw ArgumentError("scale range must be positive");
  if (gamma.lo <= 0.0) throw ArgumentError("gamma range must be positive");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ArgumentError("noise_std must be >= 0");
}

GeometricTransform GeometricTransform::inverse() const {
  GeometricTransform inv;
  inv.angle_deg = -angle_deg;
  inv.scale = 1.0 / scale;
  // t' = -(1/s) R(-theta) t
  const auto [cs, sn] = cos_sin_deg(-angle_deg);
  inv.tx = -(cs * tx - sn * ty) / scale;
  inv.ty = -(sn * tx + cs * ty) / scale;
  return inv;
}

SampledTransform sample_transform(const TransformSpec& spec, std::uint64_t seed, int height, int width) {
  spec.validate();
  Rng rng(seed);
  SampledTransform t;
  // Fixed draw order keeps the sample a pure function of (spec, seed).
  t.geometric.angle_deg = rng.uniform(spec.rotation_deg.lo, spec.rotation_deg.hi);
  t.geometric.tx = rng.uniform(spec.translation.lo, spec.translation.hi) * width;
  t.geometric.ty = rng.uniform(spec.translation.lo, spec.translation.hi) * height;
  t.geometric.scale = rng.uniform(spec.scale.lo, spec.scale.hi);
  t.intensity.gamma = rng.uniform(spec.gamma.lo, spec.gamma.hi);
  t.intensity.brightness = rng.uniform(spec.brightness.lo, spec.brightness.hi);
  t.intensity.noise_std = spec.noise_std;
  t.intensity.noise_seed = rng.next_u64();
  return t;
}

Grid<double> warp_image(const Grid<double>& image, const GeometricTransform& t) {
  if (t.is_identity()) return image;
  const int h = image.height(), w = image.width();
  const InverseMap map(t, h, w);
  Grid<double> out(h, w, 0.0);
  auto at = [&](int y, int x) { return (y >= 0 && y < h && x >= 0 && x < w) ? image(y, x) : 0.0; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto [x, y] = map(r, c);
      const double fx0 = std::floor(x), fy0 = std::floor(y);
      if (fx0 < -1.0 || fy0 < -1.0 || fx0 > w || fy0 > h) continue;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const double fx = x - fx0, fy = y - fy0;
      const double top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
      const double bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
      out(r, c) = std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
    }
  }
  return out;
}

Mask warp_mask(const Mask& mask, const GeometricTransform& t) {
  if (t.is_identity()) return mask;
  const int h = mask.height(), w = mask.width();
  const InverseMap map(t, h, w);
  Mask out(h, w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto [x, y] = map(r, c);
      const double xn = std::floor(x + 0.5), yn = std::floor(y + 0.5);
      if (xn < 0 || yn < 0 || xn >= w || yn >= h) continue;
      out(r, c) = mask(static_cast<int>(yn), static_cast<int>(xn)) ? 1 : 0;
    }
  }
  return out;
}

Grid<double> apply_intensity(const Grid<double>& image, const IntensityTransform& t) {
  if (t.is_identity()) return image;
  Grid<double> out(image.height(), image.width());
  Rng noise(t.noise_seed);
  for (std::size_t i = 0; i < image.size(); ++i) {
    double v = std::pow(std::clamp(image[i], 0.0, 1.0), t.gamma) + t.brightness;
    if (t.noise_std > 0.0) v += t.noise_std * noise.normal();
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

ImageSlice apply_transform(const ImageSlice& image, const SampledTransform& t) {
  ImageSlice out = image;
  out.pixels = apply_intensity(warp_image(image.pixels, t.geometric), t.intensity);
  return out;
}

std::vector<ImageSlice> sample_views(const ImageSlice& image, int K, const TransformSpec& spec, std::uint64_t seed) {
  if (K < 2) throw ArgumentError("sample_views needs K >= 2 (at least one positive pair)");
  spec.validate();
  std::vector<ImageSlice> views;
  views.reserve(K);
  for (int k = 0; k < K; ++k) {
    const auto t = sample_transform(spec, derive_seed(seed, streams::kStage1Views, static_cast<std::uint64_t>(k)),
                                    image.height(), image.width());
    views.push_back(apply_transform(image, t));
  }
  return views;
}

std::pair<ImageSlice, Mask> apply_paired_transform(const ImageSlice& image, const Mask& mask, const SampledTransform& t) {
  if (!image.pixels.same_shape(mask)) throw ArgumentError("image and mask shapes differ");
  if (!is_binary(mask)) throw ArgumentError("mask must be {0,1}-valued");
  return {apply_transform(image, t), warp_mask(mask, t.geometric)};
}

std::pair<ImageSlice, Mask> apply_paired_transform(const ImageSlice& image, const Mask& mask, const TransformSpec& spec,
                                                   std::uint64_t seed) {
  if (!image.pixels.same_shape(mask)) throw ArgumentError("image and mask shapes differ");
  return apply_paired_transform(image, mask, sample_transform(spec, seed, image.height(), image.width()));
}

}  // namespace densemp
