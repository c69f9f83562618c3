#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densemp/autodiff.hpp"
#include "densemp/grid.hpp"

namespace densemp {

struct EncoderConfig {
  int input_size = 32;
  int input_channels = 1;
  std::vector<int> block_channels{16, 32};
  int downsample_factor = 2;  ///< Power of two; the first log2(factor) blocks halve the resolution.
  int feature_dim = 32;       ///< C; equals block_channels.back().
  int projection_dim = 16;    ///< C'
  int grid_size = 4;          ///< S

  int feature_size() const { return input_size / downsample_factor; }
  int downsample_blocks() const;
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Named parameter tensors in deterministic (lexicographic) order.
using ParameterSet = std::map<std::string, ad::Tensor>;

/// Backbone features {C, h, w}.
using FeatureMap = ad::Tensor;

/// Parameters registered on a tape for one forward/backward pass.
class BoundParameters {
 public:
  ad::Var operator[](const std::string& name) const { return vars_.at(name); }
  const std::map<std::string, ad::Var>& vars() const { return vars_; }
  ad::Tape& tape() const { return *tape_; }

  /// Gradients after Tape::backward, keyed like the ParameterSet.
  ParameterSet gradients() const;

 private:
  friend class Encoder;
  ad::Tape* tape_ = nullptr;
  std::map<std::string, ad::Var> vars_;
};

/// Grid of S*S unit vectors stored as columns ({dim, S*S}), cells in row-major order.
struct DenseProjection {
  ad::Tensor keys;       ///< {C', S*S}, projected and L2-normalized.
  ad::Tensor alignment;  ///< {C, S*S}, pooled backbone features, L2-normalized.
  int S = 0;
};

/// Convolutional backbone (conv -> layer norm -> ReLU -> optional 2x2 average pool per
/// block) with two-layer projection heads for dense keys and global embeddings.
class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t seed);
  Encoder(EncoderConfig config, ParameterSet params);

  const EncoderConfig& config() const noexcept { return config_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& parameters() noexcept { return params_; }
  std::size_t parameter_count() const;

  /// Registers every parameter as a tape variable (trainable) or constant.
  BoundParameters bind(ad::Tape& tape, bool trainable = true) const;

  /// {C, h, w} features. Throws ArgumentError if the slice does not match input_size.
  ad::Var encode(const BoundParameters& p, const ImageSlice& image) const;
  /// {C', S*S} normalized keys: adaptive pool -> fc -> ReLU -> fc -> L2 normalize.
  ad::Var project_dense(const BoundParameters& p, ad::Var features) const;
  /// {C', 1} normalized global embedding: mean pool -> fc -> ReLU -> fc -> L2 normalize.
  ad::Var project_global(const BoundParameters& p, ad::Var features) const;

  // Convenience forward passes without gradient tracking.
  FeatureMap encode(const ImageSlice& image) const;
  ad::Tensor project_dense(const FeatureMap& features) const;
  ad::Tensor project_global(const FeatureMap& features) const;
  DenseProjection dense_projection(const FeatureMap& features) const;

 private:
  EncoderConfig config_;
  ParameterSet params_;
};

/// Alignment vectors: adaptive average pool of backbone features to S x S, each cell
/// L2-normalized. Throws ArgumentError when the feature map is smaller than S.
ad::Tensor adaptive_pool_align(const FeatureMap& features, int S);
ad::Var adaptive_pool_align(ad::Var features, int S);

/// Max absolute deviation of any column norm from 1.
double max_unit_norm_error(const ad::Tensor& columns);

}  // namespace densemp
