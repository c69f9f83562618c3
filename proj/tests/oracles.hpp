#pragma once
// Slow reference implementations. None of them call into the library code they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "densemp/autodiff.hpp"
#include "densemp/grid.hpp"

namespace densemp::oracle {

using Real = boost::multiprecision::cpp_bin_float_50;

inline Real column_dot(const ad::Tensor& a, int i, const ad::Tensor& b, int j) {
  Real s = 0;
  for (int r = 0; r < a.rows(); ++r) s += Real(a.at(r, i)) * Real(b.at(r, j));
  return s;
}

/// -log(e^{p/tau} / (e^{p/tau} + sum_j e^{n_j/tau})) in 50-digit arithmetic.
inline Real info_nce(const Real& pos, const std::vector<Real>& negs, double tau) {
  Real denom = exp(pos / tau);
  const Real num = denom;
  for (const auto& n : negs) denom += exp(n / tau);
  return -log(num / denom);
}

inline double dense_loss(const ad::Tensor& keys_a, const ad::Tensor& keys_b, const std::vector<int>& match,
                         const ad::Tensor& negatives, double tau) {
  Real total = 0;
  for (int i = 0; i < keys_a.cols(); ++i) {
    std::vector<Real> negs;
    for (int j = 0; j < negatives.cols(); ++j) negs.push_back(column_dot(keys_a, i, negatives, j));
    total += info_nce(column_dot(keys_a, i, keys_b, match[i]), negs, tau);
  }
  return static_cast<double>(total / keys_a.cols());
}

inline double global_loss(const ad::Tensor& g, const ad::Tensor& g_pos, const ad::Tensor& g_negs, double tau) {
  std::vector<Real> negs;
  for (int j = 0; j < g_negs.cols(); ++j) negs.push_back(column_dot(g, 0, g_negs, j));
  return static_cast<double>(info_nce(column_dot(g, 0, g_pos, 0), negs, tau));
}

inline Real cosine(const std::vector<double>& a, const std::vector<double>& b) {
  Real ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += Real(a[i]) * Real(b[i]);
    aa += Real(a[i]) * Real(a[i]);
    bb += Real(b[i]) * Real(b[i]);
  }
  return ab / (sqrt(aa) * sqrt(bb));
}

/// Exhaustive positive matching: for every cell of grid a, scan every cell of grid b.
inline std::vector<int> match_exhaustive(const ad::Tensor& align_a, const ad::Tensor& align_b) {
  auto norms = [](const ad::Tensor& t) {
    std::vector<Real> n(t.cols());
    for (int j = 0; j < t.cols(); ++j) n[j] = sqrt(column_dot(t, j, t, j));
    return n;
  };
  const auto na = norms(align_a), nb = norms(align_b);
  auto cos_ab = [&](int i, int j) { return column_dot(align_a, i, align_b, j) / (na[i] * nb[j]); };
  std::vector<int> out;
  for (int i = 0; i < align_a.cols(); ++i) {
    int best = 0;
    Real best_sim = cos_ab(i, 0);
    for (int j = 1; j < align_b.cols(); ++j) {
      const Real s = cos_ab(i, j);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    out.push_back(best);
  }
  return out;
}

/// Bilinear upsampling with half-pixel centers and clamped source coordinates.
inline std::vector<Real> upsample(const std::vector<Real>& src, int h, int w, int H, int W) {
  std::vector<Real> out(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      double y = (r + 0.5) * h / H - 0.5, x = (c + 0.5) * w / W - 0.5;
      y = std::clamp(y, 0.0, h - 1.0);
      x = std::clamp(x, 0.0, w - 1.0);
      const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const Real fy = y - y0, fx = x - x0;
      out[static_cast<std::size_t>(r) * W + c] =
          (1 - fy) * ((1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
          fy * ((1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
    }
  }
  return out;
}

/// Query feature {C, h, w}; prototype columns {C, n}. Foreground probability per full-resolution
/// pixel: logistic(alpha * (max_fg cos - max_bg cos)), computed at feature resolution and
/// upsampled.
inline std::vector<Real> segment(const ad::Tensor& fg, const ad::Tensor& bg, const ad::Tensor& query, double alpha,
                                 int H, int W) {
  const int C = query.shape[0], h = query.shape[1], w = query.shape[2];
  std::vector<Real> p(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h * w; ++i) {
    std::vector<double> f(C);
    for (int c = 0; c < C; ++c) f[c] = query.data[static_cast<std::size_t>(c) * h * w + i];
    auto best = [&](const ad::Tensor& protos) {
      Real m = cosine(f, protos.column(0));
      for (int j = 1; j < protos.cols(); ++j) m = std::max(m, cosine(f, protos.column(j)));
      return m;
    };
    const Real s_fg = alpha * best(fg), s_bg = alpha * best(bg);
    p[i] = exp(s_fg) / (exp(s_fg) + exp(s_bg));
  }
  return upsample(p, h, w, H, W);
}

/// Mean pixelwise negative log-likelihood with probabilities clamped to [1e-12, 1].
inline double cross_entropy(const std::vector<Real>& p_fg, const Mask& target) {
  Real total = 0;
  const Real floor = Real(1e-12);
  for (std::size_t i = 0; i < p_fg.size(); ++i) {
    Real q = target[i] ? p_fg[i] : 1 - p_fg[i];
    if (q < floor) q = floor;
    total -= log(q);
  }
  return static_cast<double>(total / p_fg.size());
}

/// Felzenszwalb-Huttenlocher on a 4-connected grid, simulated edge by edge with an explicit
/// per-pixel component array (relabelling is O(V) per merge). `image` is the already smoothed
/// intensity grid. Returns one component id per pixel.
inline std::vector<int> felzenszwalb_naive(const Grid<double>& image, double k, int min_size) {
  const int h = image.height(), w = image.width(), V = h * w;
  using Edge = std::tuple<double, int, int, int>;  // weight, row, col, dir
  std::vector<Edge> edges;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) edges.emplace_back(std::abs(image(r, c) - image(r, c + 1)), r, c, 0);
      if (r + 1 < h) edges.emplace_back(std::abs(image(r, c) - image(r + 1, c)), r, c, 1);
    }
  std::sort(edges.begin(), edges.end());

  std::vector<int> comp(V);
  for (int i = 0; i < V; ++i) comp[i] = i;
  std::map<int, double> internal;  // max internal edge weight per component
  auto size_of = [&](int id) { return static_cast<int>(std::count(comp.begin(), comp.end(), id)); };
  auto merge = [&](int keep, int drop, double wgt) {
    for (auto& c : comp)
      if (c == drop) c = keep;
    internal[keep] = std::max({internal[keep], internal[drop], wgt});
    internal.erase(drop);
  };
  auto endpoints = [&](const Edge& e) {
    const auto& [wgt, r, c, d] = e;
    const int a = r * w + c;
    return std::pair<int, int>{a, d == 0 ? a + 1 : a + w};
  };

  for (const auto& e : edges) {
    const auto [a, b] = endpoints(e);
    const int ca = comp[a], cb = comp[b];
    if (ca == cb) continue;
    const double wgt = std::get<0>(e);
    const double ta = internal[ca] + k / size_of(ca);
    const double tb = internal[cb] + k / size_of(cb);
    if (wgt <= std::min(ta, tb)) merge(ca, cb, wgt);
  }
  for (const auto& e : edges) {
    const auto [a, b] = endpoints(e);
    const int ca = comp[a], cb = comp[b];
    if (ca == cb) continue;
    if (size_of(ca) < min_size || size_of(cb) < min_size) merge(ca, cb, std::get<0>(e));
  }
  return comp;
}

/// Canonical form of a partition: ids renumbered by first appearance in raster order.
inline std::vector<int> canonical(const std::vector<int>& ids) {
  std::map<int, int> remap;
  std::vector<int> out;
  for (int id : ids) {
    auto it = remap.find(id);
    if (it == remap.end()) it = remap.emplace(id, static_cast<int>(remap.size())).first;
    out.push_back(it->second);
  }
  return out;
}

}  // namespace densemp::oracle
