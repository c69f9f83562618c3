#include "densemp/encoder.hpp"

#include <bit>
#include <cmath>

#include <nlohmann/json.hpp>

#include "densemp/manifest.hpp"
#include "densemp/rng.hpp"

namespace densemp {
namespace {

std::string block_name(std::size_t i, const char* leaf) { return "block" + std::to_string(i) + "." + leaf; }

void init_normal(ad::Tensor& t, Rng& rng, double stddev) {
  for (auto& v : t.data) v = rng.normal(0.0, stddev);
}

void add_head(ParameterSet& params, const std::string& prefix, int in, int hidden, int out, Rng& rng) {
  ad::Tensor w1({hidden, in}), b1({hidden}), w2({out, hidden}), b2({out});
  init_normal(w1, rng, std::sqrt(2.0 / in));
  init_normal(b1, rng, 0.1);
  init_normal(w2, rng, std::sqrt(1.0 / hidden));
  init_normal(b2, rng, 0.1);
  params[prefix + ".fc1.weight"] = std::move(w1);
  params[prefix + ".fc1.bias"] = std::move(b1);
  params[prefix + ".fc2.weight"] = std::move(w2);
  params[prefix + ".fc2.bias"] = std::move(b2);
}

ad::Var head(const BoundParameters& p, const std::string& prefix, ad::Var x) {
  auto h = ad::relu(ad::linear(x, p[prefix + ".fc1.weight"], p[prefix + ".fc1.bias"]));
  return ad::normalize_cols(ad::linear(h, p[prefix + ".fc2.weight"], p[prefix + ".fc2.bias"]));
}

}  // namespace

int EncoderConfig::downsample_blocks() const { return std::countr_zero(static_cast<unsigned>(downsample_factor)); }

void EncoderConfig::validate() const {
  if (input_size <= 0 || feature_dim <= 0 || projection_dim <= 0 || grid_size <= 0)
    throw ConfigError("encoder dimensions must be positive");
  if (input_channels != 1 && input_channels != 3) throw ConfigError("encoder input_channels must be 1 or 3");
  if (block_channels.empty()) throw ConfigError("encoder needs at least one block");
  for (int c : block_channels)
    if (c <= 0) throw ConfigError("block channel counts must be positive");
  if (downsample_factor <= 0 || !std::has_single_bit(static_cast<unsigned>(downsample_factor)))
    throw ConfigError("downsample_factor must be a power of two");
  if (downsample_blocks() > static_cast<int>(block_channels.size()))
    throw ConfigError("downsample_factor needs more blocks than configured");
  if (input_size % downsample_factor != 0) throw ConfigError("input_size must be divisible by downsample_factor");
  if (feature_dim != block_channels.back()) throw ConfigError("feature_dim must equal the last block's channel count");
  if (feature_size() < grid_size) throw ConfigError("grid_size S exceeds the feature map size");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},           {"input_channels", c.input_channels},
                     {"block_channels", c.block_channels},   {"downsample_factor", c.downsample_factor},
                     {"feature_dim", c.feature_dim},         {"projection_dim", c.projection_dim},
                     {"grid_size", c.grid_size}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.input_size = j.value("input_size", d.input_size);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.block_channels = j.value("block_channels", d.block_channels);
  c.downsample_factor = j.value("downsample_factor", d.downsample_factor);
  c.feature_dim = j.value("feature_dim", c.block_channels.empty() ? d.feature_dim : c.block_channels.back());
  c.projection_dim = j.value("projection_dim", d.projection_dim);
  c.grid_size = j.value("grid_size", d.grid_size);
}

ParameterSet BoundParameters::gradients() const {
  ParameterSet out;
  for (const auto& [name, v] : vars_) out[name] = tape_->grad(v);
  return out;
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, streams::kInit));
  int in = config_.input_channels;
  for (std::size_t i = 0; i < config_.block_channels.size(); ++i) {
    const int out = config_.block_channels[i];
    ad::Tensor w({out, in, 3, 3});
    init_normal(w, rng, std::sqrt(2.0 / (in * 9)));
    params_[block_name(i, "conv.weight")] = std::move(w);
    params_[block_name(i, "conv.bias")] = ad::Tensor({out}, 0.0);
    params_[block_name(i, "norm.gamma")] = ad::Tensor({out}, 1.0);
    params_[block_name(i, "norm.beta")] = ad::Tensor({out}, 0.0);
    in = out;
  }
  add_head(params_, "dense_head", config_.feature_dim, config_.feature_dim, config_.projection_dim, rng);
  add_head(params_, "global_head", config_.feature_dim, config_.feature_dim, config_.projection_dim, rng);
}

Encoder::Encoder(EncoderConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const Encoder reference(config_, 0);
  for (const auto& [name, t] : reference.params_) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("parameter '" + name + "' missing");
    if (it->second.shape != t.shape)
      throw ConfigError("parameter '" + name + "' has shape " + ad::shape_string(it->second.shape) + ", expected " +
                        ad::shape_string(t.shape));
  }
  if (params_.size() != reference.params_.size()) throw ConfigError("unexpected extra parameters");
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

BoundParameters Encoder::bind(ad::Tape& tape, bool trainable) const {
  BoundParameters b;
  b.tape_ = &tape;
  for (const auto& [name, t] : params_) b.vars_[name] = trainable ? tape.variable(t) : tape.constant(t);
  return b;
}

ad::Var Encoder::encode(const BoundParameters& p, const ImageSlice& image) const {
  if (image.height() != config_.input_size || image.width() != config_.input_size)
    throw ArgumentError("encode: image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                        ", encoder expects " + std::to_string(config_.input_size));
  if (image.channels != config_.input_channels)
    throw ArgumentError("encode: image has " + std::to_string(image.channels) + " channels, encoder expects " +
                        std::to_string(config_.input_channels));
  auto x = p.tape().constant(ad::Tensor({image.channels, image.height(), image.width()}, replicate_planes(image)));
  const int pooled = config_.downsample_blocks();
  for (std::size_t i = 0; i < config_.block_channels.size(); ++i) {
    x = ad::conv2d(x, p[block_name(i, "conv.weight")], p[block_name(i, "conv.bias")]);
    x = ad::layer_norm(x, p[block_name(i, "norm.gamma")], p[block_name(i, "norm.beta")]);
    x = ad::relu(x);
    if (static_cast<int>(i) < pooled) x = ad::avg_pool2(x);
  }
  return x;
}

ad::Var Encoder::project_dense(const BoundParameters& p, ad::Var features) const {
  return head(p, "dense_head", ad::adaptive_avg_pool(features, config_.grid_size));
}

ad::Var Encoder::project_global(const BoundParameters& p, ad::Var features) const {
  return head(p, "global_head", ad::mean_cols(ad::flatten_spatial(features)));
}

FeatureMap Encoder::encode(const ImageSlice& image) const {
  ad::Tape tape;
  auto p = bind(tape, false);
  return encode(p, image).value();
}

ad::Tensor Encoder::project_dense(const FeatureMap& features) const {
  ad::Tape tape;
  auto p = bind(tape, false);
  return project_dense(p, tape.constant(features)).value();
}

ad::Tensor Encoder::project_global(const FeatureMap& features) const {
  ad::Tape tape;
  auto p = bind(tape, false);
  return project_global(p, tape.constant(features)).value();
}

DenseProjection Encoder::dense_projection(const FeatureMap& features) const {
  return {project_dense(features), adaptive_pool_align(features, config_.grid_size), config_.grid_size};
}

ad::Var adaptive_pool_align(ad::Var features, int S) {
  const auto& shape = features.value().shape;
  if (shape.size() != 3) throw ArgumentError("adaptive_pool_align expects a {C, h, w} feature map");
  if (shape[1] < S || shape[2] < S) throw ArgumentError("adaptive_pool_align: feature map smaller than S");
  return ad::normalize_cols(ad::adaptive_avg_pool(features, S));
}

ad::Tensor adaptive_pool_align(const FeatureMap& features, int S) {
  ad::Tape tape;
  return adaptive_pool_align(tape.constant(features), S).value();
}

double max_unit_norm_error(const ad::Tensor& columns) {
  double worst = 0.0;
  for (int i = 0; i < columns.cols(); ++i) {
    double n2 = 0.0;
    for (int c = 0; c < columns.rows(); ++c) n2 += columns.at(c, i) * columns.at(c, i);
    worst = std::max(worst, std::abs(std::sqrt(n2) - 1.0));
  }
  return worst;
}

}  // namespace densemp
