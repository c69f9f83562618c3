#pragma once

#include <cstdint>
#include <vector>

#include "densemp/grid.hpp"
#include "densemp/transforms.hpp"

namespace densemp {

struct FelzParams {
  double k_scale = 0.1;  ///< Merge threshold scale (intensity units, images in [0,1]).
  double sigma = 0.8;    ///< Gaussian pre-smoothing std in pixels; 0 disables smoothing.
  int min_size = 6;      ///< Minimum final segment size in pixels.

  void validate() const;
};

struct SuperpixelMap {
  LabelMap labels;  ///< Contiguous labels 0..n_segments-1, numbered in raster order of first pixel.
  int n_segments = 0;

  std::vector<std::int64_t> segment_sizes() const;
  Mask segment_mask(int label) const;
};

/// One 4-neighborhood edge: pixel (row, col) to its right (dir 0) or lower (dir 1) neighbor.
struct GridEdge {
  double weight;
  int row;
  int col;
  int dir;
};

/// Separable Gaussian with a (ceil(4 sigma) + 1)-tap half kernel and clamped borders.
Grid<double> gaussian_smooth(const Grid<double>& image, double sigma);

/// All 4-connected edges sorted by (weight, row, col, dir).
std::vector<GridEdge> sorted_grid_edges(const Grid<double>& smoothed);

/// Graph-based segmentation (Felzenszwalb-Huttenlocher) on a 4-connected grid with
/// |intensity difference| edge weights, followed by a min-size merge pass.
SuperpixelMap felzenszwalb_segment(const ImageSlice& image, const FelzParams& params);
SuperpixelMap felzenszwalb_segment(const Grid<double>& image, const FelzParams& params);

/// Renumbers arbitrary per-pixel component ids to 0..n-1 in raster order.
SuperpixelMap relabel_contiguous(const std::vector<int>& component_of_pixel, int height, int width);

/// Indicator mask of one segment drawn uniformly among those with >= min_fg pixels.
/// Throws SelectionExhaustedError when no segment qualifies.
Mask select_pseudo_label(const SuperpixelMap& spmap, int min_fg, std::uint64_t rng_seed);

struct FewShotEpisode {
  ImageSlice support_image;
  Mask support_mask;
  ImageSlice query_image;
  Mask query_mask;
  int n_ways = 1;
  int n_shots = 1;
  SampledTransform transform;  ///< The paired transform that produced the query.
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kMaxEpisodeTransformAttempts = 10;

/// Support = (image, pseudo_mask); query = paired transform of the support. Attempt a uses seed
/// derive_seed(seed, episode-transform stream, a); after 10 attempts that empty the query
/// foreground, throws EpisodeConstructionError.
FewShotEpisode build_episode(const ImageSlice& image, const Mask& pseudo_mask, const TransformSpec& spec,
                             std::uint64_t seed);

}  // namespace densemp
