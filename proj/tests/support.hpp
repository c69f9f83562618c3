#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "densemp/encoder.hpp"
#include "densemp/grid.hpp"
#include "densemp/rng.hpp"

namespace densemp::testing {

inline Grid<double> random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Grid<double> g(h, w);
  for (auto& v : g.values()) v = rng.uniform();
  return g;
}

inline ImageSlice random_slice(int size, std::uint64_t seed, const std::string& id = "s") {
  return {random_image(size, size, seed), id, 1};
}

inline ad::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Two-block encoder well under 5k parameters.
inline EncoderConfig tiny_encoder_config() {
  EncoderConfig c;
  c.input_size = 8;
  c.block_channels = {4, 6};
  c.downsample_factor = 2;
  c.feature_dim = 6;
  c.projection_dim = 4;
  c.grid_size = 2;
  return c;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps components that are zero up to rounding
/// from producing meaningless ratios.
inline double rel_err(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central differences of `loss` w.r.t. every parameter entry, compared with `analytic`.
inline GradCheck check_gradients(Encoder& encoder, const ParameterSet& analytic,
                                 const std::function<double(const Encoder&)>& loss, double eps = 1e-5) {
  GradCheck out;
  for (auto& [name, tensor] : encoder.parameters()) {
    const auto& g = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor.data[i];
      tensor.data[i] = saved + eps;
      const double up = loss(encoder);
      tensor.data[i] = saved - eps;
      const double down = loss(encoder);
      tensor.data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double e = rel_err(g.data[i], numeric);
      ++out.checked;
      if (e > out.max_rel_err) {
        out.max_rel_err = e;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(g.data[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace densemp::testing
