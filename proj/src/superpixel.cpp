#include "densemp/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "densemp/rng.hpp"

namespace densemp {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), rank_(n, 0), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  int find(int x) {
    int root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const int next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  // Returns the surviving root.
  int join(int a, int b) {
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    if (rank_[a] == rank_[b]) ++rank_[a];
    return a;
  }

  int size(int root) const { return size_[root]; }

 private:
  std::vector<int> parent_;
  std::vector<int> rank_;
  std::vector<int> size_;
};

}  // namespace

void FelzParams::validate() const {
  if (!(k_scale > 0.0) || !std::isfinite(k_scale)) throw ArgumentError("k_scale must be > 0");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ArgumentError("sigma must be >= 0");
  if (min_size < 1) throw ArgumentError("min_size must be >= 1");
}

std::vector<std::int64_t> SuperpixelMap::segment_sizes() const {
  std::vector<std::int64_t> sizes(n_segments, 0);
  for (auto l : labels.values()) ++sizes[l];
  return sizes;
}

Mask SuperpixelMap::segment_mask(int label) const {
  Mask m(labels.height(), labels.width());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = labels[i] == label;
  return m;
}

Grid<double> gaussian_smooth(const Grid<double>& image, double sigma) {
  if (sigma <= 0.0 || image.empty()) return image;
  const int len = static_cast<int>(std::ceil(sigma * 4.0)) + 1;
  std::vector<double> kernel(len);
  for (int i = 0; i < len; ++i) kernel[i] = std::exp(-0.5 * (i / sigma) * (i / sigma));
  const double sum = 2.0 * std::accumulate(kernel.begin(), kernel.end(), 0.0) - kernel[0];
  for (auto& v : kernel) v /= sum;

  const int h = image.height(), w = image.width();
  Grid<double> tmp(h, w), out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = kernel[0] * image(r, c);
      for (int i = 1; i < len; ++i)
        acc += kernel[i] * (image(r, std::max(c - i, 0)) + image(r, std::min(c + i, w - 1)));
      tmp(r, c) = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = kernel[0] * tmp(r, c);
      for (int i = 1; i < len; ++i)
        acc += kernel[i] * (tmp(std::max(r - i, 0), c) + tmp(std::min(r + i, h - 1), c));
      out(r, c) = acc;
    }
  }
  return out;
}

std::vector<GridEdge> sorted_grid_edges(const Grid<double>& smoothed) {
  const int h = smoothed.height(), w = smoothed.width();
  std::vector<GridEdge> edges;
  edges.reserve(static_cast<std::size_t>(h) * w * 2);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) edges.push_back({std::abs(smoothed(r, c) - smoothed(r, c + 1)), r, c, 0});
      if (r + 1 < h) edges.push_back({std::abs(smoothed(r, c) - smoothed(r + 1, c)), r, c, 1});
    }
  }
  // Generated in (row, col, dir) order, so a stable sort on weight gives the full tie-break.
  std::stable_sort(edges.begin(), edges.end(), [](const GridEdge& a, const GridEdge& b) { return a.weight < b.weight; });
  return edges;
}

SuperpixelMap relabel_contiguous(const std::vector<int>& component_of_pixel, int height, int width) {
  SuperpixelMap out;
  out.labels = LabelMap(height, width);
  std::vector<int> remap(component_of_pixel.size(), -1);
  for (std::size_t i = 0; i < component_of_pixel.size(); ++i) {
    int& slot = remap[component_of_pixel[i]];
    if (slot < 0) slot = out.n_segments++;
    out.labels[i] = slot;
  }
  return out;
}

SuperpixelMap felzenszwalb_segment(const Grid<double>& image, const FelzParams& params) {
  params.validate();
  if (image.empty()) throw ArgumentError("cannot segment an empty image");
  const int h = image.height(), w = image.width();
  const auto edges = sorted_grid_edges(gaussian_smooth(image, params.sigma));

  DisjointSets sets(image.size());
  std::vector<double> threshold(image.size(), params.k_scale);
  auto endpoint = [w](const GridEdge& e) {
    const int a = e.row * w + e.col;
    return std::pair{a, e.dir == 0 ? a + 1 : a + w};
  };

  for (const auto& e : edges) {
    const auto [pa, pb] = endpoint(e);
    const int a = sets.find(pa), b = sets.find(pb);
    if (a == b) continue;
    // Edges arrive in ascending order, so e.weight is the new internal difference.
    if (e.weight <= threshold[a] && e.weight <= threshold[b]) {
      const int root = sets.join(a, b);
      threshold[root] = e.weight + params.k_scale / sets.size(root);
    }
  }
  // A single pass suffices: component sizes only grow, so a component still below min_size at
  // the end would have been merged at its first boundary edge.
  for (const auto& e : edges) {
    const auto [pa, pb] = endpoint(e);
    const int a = sets.find(pa), b = sets.find(pb);
    if (a != b && (sets.size(a) < params.min_size || sets.size(b) < params.min_size)) sets.join(a, b);
  }

  std::vector<int> component(image.size());
  for (std::size_t i = 0; i < component.size(); ++i) component[i] = sets.find(static_cast<int>(i));
  return relabel_contiguous(component, h, w);
}

SuperpixelMap felzenszwalb_segment(const ImageSlice& image, const FelzParams& params) {
  return felzenszwalb_segment(image.pixels, params);
}

Mask select_pseudo_label(const SuperpixelMap& spmap, int min_fg, std::uint64_t rng_seed) {
  const auto sizes = spmap.segment_sizes();
  std::vector<int> eligible;
  for (int s = 0; s < spmap.n_segments; ++s)
    if (sizes[s] >= min_fg) eligible.push_back(s);
  if (eligible.empty())
    throw SelectionExhaustedError("no superpixel has >= " + std::to_string(min_fg) + " pixels");
  Rng rng(rng_seed);
  return spmap.segment_mask(eligible[rng.index(eligible.size())]);
}

void FewShotEpisode::validate() const {
  if (!support_image.pixels.same_shape(support_mask) || !support_image.pixels.same_shape(query_image.pixels) ||
      !support_image.pixels.same_shape(query_mask))
    throw ArgumentError("episode grids must share one shape");
  if (!is_binary(support_mask) || !is_binary(query_mask)) throw ArgumentError("episode masks must be binary");
  if (foreground_count(support_mask) == 0) throw ArgumentError("support mask has no foreground");
}

FewShotEpisode build_episode(const ImageSlice& image, const Mask& pseudo_mask, const TransformSpec& spec,
                             std::uint64_t seed) {
  if (!image.pixels.same_shape(pseudo_mask)) throw ArgumentError("image and mask shapes differ");
  if (foreground_count(pseudo_mask) == 0) throw ArgumentError("pseudo mask has no foreground");
  for (int attempt = 0; attempt < kMaxEpisodeTransformAttempts; ++attempt) {
    const auto t = sample_transform(spec, derive_seed(seed, streams::kEpisodeTransform, attempt), image.height(),
                                    image.width());
    auto [query, query_mask] = apply_paired_transform(image, pseudo_mask, t);
    if (foreground_count(query_mask) == 0) continue;
    FewShotEpisode ep{image, pseudo_mask, std::move(query), std::move(query_mask), 1, 1, t, seed};
    return ep;
  }
  throw EpisodeConstructionError("query foreground vanished in " + std::to_string(kMaxEpisodeTransformAttempts) +
                                 " transform attempts");
}

}  // namespace densemp
