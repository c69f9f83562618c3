#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "densemp/grid.hpp"

namespace densemp {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate() const noexcept { return lo == hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Families of random augmentation: rotation, translation and isotropic scale (geometric);
/// gamma, additive brightness and Gaussian noise (intensity).
struct TransformSpec {
  Interval rotation_deg{0.0, 0.0};
  Interval translation{0.0, 0.0};  ///< Fraction of the image side, sampled per axis.
  Interval scale{1.0, 1.0};
  Interval gamma{1.0, 1.0};
  Interval brightness{0.0, 0.0};
  double noise_std = 0.0;

  /// Every range collapsed to its no-op value.
  static TransformSpec identity() { return {}; }
  /// Default augmentation used for contrastive views and pseudo episodes.
  static TransformSpec standard();

  void validate() const;
  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Similarity transform about the image center: out = c + s * R(angle) * (in - c) + t.
struct GeometricTransform {
  double angle_deg = 0.0;
  double tx = 0.0;  ///< Pixels.
  double ty = 0.0;
  double scale = 1.0;

  bool is_identity() const noexcept { return angle_deg == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0; }
  GeometricTransform inverse() const;
};

struct IntensityTransform {
  double gamma = 1.0;
  double brightness = 0.0;
  double noise_std = 0.0;
  std::uint64_t noise_seed = 0;

  bool is_identity() const noexcept { return gamma == 1.0 && brightness == 0.0 && noise_std == 0.0; }
};

struct SampledTransform {
  GeometricTransform geometric;
  IntensityTransform intensity;
};

/// Pure function of (spec, seed, size).
SampledTransform sample_transform(const TransformSpec& spec, std::uint64_t seed, int height, int width);

/// Bilinear, zero outside the source.
Grid<double> warp_image(const Grid<double>& image, const GeometricTransform& t);
/// Nearest-neighbor, zero outside the source.
Mask warp_mask(const Mask& mask, const GeometricTransform& t);
Grid<double> apply_intensity(const Grid<double>& image, const IntensityTransform& t);

ImageSlice apply_transform(const ImageSlice& image, const SampledTransform& t);

/// K independently augmented views; view k uses seed derive_seed(seed, views-stream, k).
std::vector<ImageSlice> sample_views(const ImageSlice& image, int K, const TransformSpec& spec, std::uint64_t seed);

/// One sampled transform applied to both: bilinear for the image, nearest for the mask;
/// intensity changes affect the image only.
std::pair<ImageSlice, Mask> apply_paired_transform(const ImageSlice& image, const Mask& mask, const TransformSpec& spec,
                                                   std::uint64_t seed);
std::pair<ImageSlice, Mask> apply_paired_transform(const ImageSlice& image, const Mask& mask, const SampledTransform& t);

}  // namespace densemp
