#include "densemp/fewshot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace densemp {
namespace {

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

struct ClassPrototypes {
  std::vector<ad::Var> columns;
  std::vector<std::pair<int, int>> cells;
};

ClassPrototypes class_prototypes(ad::Var flat, const std::vector<double>& weights, const std::vector<double>& coverage,
                                 int h, int w, const PrototypeConfig& cfg) {
  ClassPrototypes out;
  out.columns.push_back(ad::weighted_mean_cols(flat, weights));
  const int win = cfg.window;
  for (int wr = 0; wr * win < h; ++wr) {
    for (int wc = 0; wc * win < w; ++wc) {
      std::vector<double> local(weights.size(), 0.0);
      double cover = 0.0, local_sum = 0.0;
      int cells = 0;
      for (int r = wr * win; r < std::min(h, (wr + 1) * win); ++r)
        for (int c = wc * win; c < std::min(w, (wc + 1) * win); ++c) {
          const int i = r * w + c;
          cover += coverage[i];
          local[i] = weights[i];
          local_sum += weights[i];
          ++cells;
        }
      if (cover / cells >= cfg.coverage_threshold && local_sum > 0.0) {
        out.columns.push_back(ad::weighted_mean_cols(flat, std::move(local)));
        out.cells.emplace_back(wr, wc);
      }
    }
  }
  return out;
}

Grid<double> row_to_grid(const ad::Tensor& t, int h, int w) { return Grid<double>(h, w, t.data); }

}  // namespace

void PrototypeConfig::validate() const {
  if (window < 1) throw ConfigError("prototype window must be >= 1");
  if (!(coverage_threshold >= 0.0 && coverage_threshold <= 1.0))
    throw ConfigError("coverage_threshold must lie in [0, 1]");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
}

FeatureMaskWeights feature_mask_weights(const Mask& mask, int h, int w) {
  if (h <= 0 || w <= 0 || mask.height() % h != 0 || mask.width() % w != 0)
    throw ArgumentError("mask size must be a multiple of the feature size");
  const int by = mask.height() / h, bx = mask.width() / w;
  FeatureMaskWeights out;
  out.soft.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int count = 0;
      for (int y = r * by; y < (r + 1) * by; ++y)
        for (int x = c * bx; x < (c + 1) * bx; ++x) count += mask(y, x) != 0;
      out.soft[r * w + c] = static_cast<double>(count) / (by * bx);
    }
  out.fg.resize(out.soft.size());
  out.bg.resize(out.soft.size());
  for (std::size_t i = 0; i < out.soft.size(); ++i) {
    out.fg[i] = out.soft[i] >= 0.5 ? 1.0 : 0.0;
    out.bg[i] = 1.0 - out.fg[i];
  }
  if (total(out.fg) == 0.0) out.fg = out.soft;
  if (total(out.bg) == 0.0)
    for (std::size_t i = 0; i < out.soft.size(); ++i) out.bg[i] = 1.0 - out.soft[i];
  if (total(out.fg) == 0.0) throw EpisodeSkipError("support mask has no foreground");
  if (total(out.bg) == 0.0) throw EpisodeSkipError("support mask has no background");
  return out;
}

PrototypeVars extract_prototypes(ad::Var features, const Mask& support_mask, const PrototypeConfig& cfg) {
  cfg.validate();
  const auto& shape = features.value().shape;
  if (shape.size() != 3) throw ArgumentError("extract_prototypes expects {C, h, w} features");
  if (foreground_count(support_mask) == 0) throw EpisodeSkipError("support mask is empty");
  const int h = shape[1], w = shape[2];
  const auto weights = feature_mask_weights(support_mask, h, w);
  std::vector<double> bg_cover(weights.soft.size());
  for (std::size_t i = 0; i < bg_cover.size(); ++i) bg_cover[i] = 1.0 - weights.soft[i];

  auto flat = ad::flatten_spatial(features);
  auto fg = class_prototypes(flat, weights.fg, weights.soft, h, w, cfg);
  auto bg = class_prototypes(flat, weights.bg, bg_cover, h, w, cfg);
  return {ad::concat_cols(fg.columns), ad::concat_cols(bg.columns), std::move(fg.cells), std::move(bg.cells)};
}

PrototypeSet extract_prototypes(const FeatureMap& features, const Mask& support_mask, const PrototypeConfig& cfg) {
  ad::Tape tape;
  auto vars = extract_prototypes(tape.constant(features), support_mask, cfg);
  PrototypeSet out;
  out.fg = vars.fg.value();
  out.bg = vars.bg.value();
  out.fg_cells = std::move(vars.fg_cells);
  out.bg_cells = std::move(vars.bg_cells);
  out.pooling_window = {cfg.window, cfg.window};
  out.coverage_threshold = cfg.coverage_threshold;
  return out;
}

SegmentationVars similarity_segment(const PrototypeVars& prototypes, ad::Var query_features, double alpha, int height,
                                    int width) {
  const auto& shape = query_features.value().shape;
  if (shape.size() != 3) throw ArgumentError("similarity_segment expects {C, h, w} query features");
  if (prototypes.fg.value().rows() != shape[0] || prototypes.bg.value().rows() != shape[0])
    throw ArgumentError("prototype and feature dimensions differ");
  if (!(alpha > 0.0)) throw ArgumentError("alpha must be > 0");
  const int h = shape[1], w = shape[2];
  const int n_fg = prototypes.fg.value().cols(), n_bg = prototypes.bg.value().cols();
  const std::array<ad::Var, 2> parts{prototypes.fg, prototypes.bg};
  auto protos = ad::normalize_cols(ad::concat_cols(parts));
  auto query = ad::normalize_cols(ad::flatten_spatial(query_features));
  auto cosines = ad::matmul_tn(protos, query);
  auto fg = ad::max_rows(cosines, 0, n_fg);
  auto bg = ad::max_rows(cosines, n_fg, n_fg + n_bg);
  auto p = ad::two_class_fg_probability(fg, bg, alpha);
  auto q = ad::two_class_fg_probability(bg, fg, alpha);
  return {p, ad::upsample_bilinear(p, h, w, height, width), ad::upsample_bilinear(q, h, w, height, width), height,
          width};
}

SegmentationLogits similarity_segment(const PrototypeSet& prototypes, const FeatureMap& query_features, double alpha,
                                      int height, int width) {
  ad::Tape tape;
  PrototypeVars vars{tape.constant(prototypes.fg), tape.constant(prototypes.bg), prototypes.fg_cells,
                     prototypes.bg_cells};
  auto seg = similarity_segment(vars, tape.constant(query_features), alpha, height, width);
  const int h = query_features.dim(1), w = query_features.dim(2);
  SegmentationLogits out;
  out.fg_feature = row_to_grid(seg.fg_feature.value(), h, w);
  out.fg_full = row_to_grid(seg.fg_full.value(), height, width);
  out.bg_full = row_to_grid(seg.bg_full.value(), height, width);
  // Recompute the scores from the same normalized cosines.
  const int n_fg = prototypes.fg.cols();
  const std::array<ad::Var, 2> parts{vars.fg, vars.bg};
  auto cosines = ad::matmul_tn(ad::normalize_cols(ad::concat_cols(parts)),
                               ad::normalize_cols(ad::flatten_spatial(tape.constant(query_features))));
  auto fg = ad::max_rows(cosines, 0, n_fg).value();
  auto bg = ad::max_rows(cosines, n_fg, cosines.value().rows()).value();
  out.fg_score = Grid<double>(h, w);
  out.bg_score = Grid<double>(h, w);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    out.fg_score[i] = alpha * fg.data[i];
    out.bg_score[i] = alpha * bg.data[i];
  }
  return out;
}

double ce_loss(const Grid<double>& fg_probability, const Mask& target) {
  if (!fg_probability.same_shape(target)) throw ArgumentError("ce_loss: shape mismatch");
  ad::Tape tape;
  auto p = tape.constant(ad::Tensor({1, static_cast<int>(fg_probability.size())}, fg_probability.storage()));
  return ad::binary_cross_entropy(p, target.storage()).value().item();
}

double ce_loss(const Grid<double>& fg_probability, const Grid<double>& bg_probability, const Mask& target) {
  if (!fg_probability.same_shape(target) || !bg_probability.same_shape(target))
    throw ArgumentError("ce_loss: shape mismatch");
  ad::Tape tape;
  const std::vector<int> shape{1, static_cast<int>(target.size())};
  return ad::binary_cross_entropy(tape.constant(ad::Tensor(shape, fg_probability.storage())),
                                  tape.constant(ad::Tensor(shape, bg_probability.storage())), target.storage())
      .value()
      .item();
}

ad::Var ce_loss(const SegmentationVars& seg, const Mask& target) {
  if (target.height() != seg.height || target.width() != seg.width) throw ArgumentError("ce_loss: shape mismatch");
  return ad::binary_cross_entropy(seg.fg_full, seg.bg_full, target.storage());
}

Mask predict_mask(const Grid<double>& fg_probability) {
  Mask m(fg_probability.height(), fg_probability.width());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = fg_probability[i] > 0.5;
  return m;
}

Mask predict_mask(const SegmentationVars& seg) {
  return predict_mask(row_to_grid(seg.fg_full.value(), seg.height, seg.width));
}

Mask predict_mask(const PrototypeSet& prototypes, const FeatureMap& query_features, double alpha, int height,
                  int width) {
  return predict_mask(similarity_segment(prototypes, query_features, alpha, height, width).fg_full);
}

ad::Var par_loss(ad::Var support_features, const Mask& support_mask, ad::Var query_features,
                 const Mask& predicted_query_mask, const PrototypeConfig& cfg) {
  ad::Tape& tape = *support_features.tape();
  PrototypeVars query_protos;
  try {
    query_protos = extract_prototypes(query_features, predicted_query_mask, cfg);
  } catch (const EpisodeSkipError&) {
    return tape.constant(ad::Tensor::scalar(0.0));
  }
  auto seg = similarity_segment(query_protos, support_features, cfg.alpha, support_mask.height(), support_mask.width());
  return ce_loss(seg, support_mask);
}

void Stage2Config::validate() const {
  prototypes.validate();
  superpixels.validate();
  episode_transform.validate();
  if (!(lambda_par >= 0.0)) throw ConfigError("lambda_par must be >= 0");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (min_fg < 1) throw ConfigError("min_fg must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
}

Stage2Forward stage2_forward(const FewShotEpisode& episode, const Encoder& encoder, const BoundParameters& params,
                             const Stage2Config& cfg) {
  episode.validate();
  auto fs = encoder.encode(params, episode.support_image);
  auto fq = encoder.encode(params, episode.query_image);
  auto protos = extract_prototypes(fs, episode.support_mask, cfg.prototypes);
  auto seg = similarity_segment(protos, fq, cfg.prototypes.alpha, episode.query_image.height(),
                                episode.query_image.width());
  Stage2Forward out;
  out.ce = ce_loss(seg, episode.query_mask);
  out.predicted_query = predict_mask(seg);
  if (cfg.lambda_par == 0.0) {
    out.loss = out.ce;
    return out;
  }
  out.par = par_loss(fs, episode.support_mask, fq, out.predicted_query, cfg.prototypes);
  const std::array<ad::Var, 2> parts{out.ce, *out.par};
  const std::array<double, 2> coeffs{1.0, cfg.lambda_par};
  out.loss = ad::weighted_sum(parts, coeffs);
  return out;
}

double stage2_loss(const FewShotEpisode& episode, const Encoder& encoder, const Stage2Config& cfg) {
  ad::Tape tape;
  auto params = encoder.bind(tape, false);
  return stage2_forward(episode, encoder, params, cfg).loss.value().item();
}

EpisodeTrainer::EpisodeTrainer(Encoder& encoder, Stage2Config config)
    : encoder_(encoder), config_(std::move(config)), optimizer_(config_.momentum, config_.weight_decay) {
  config_.validate();
}

EpisodeTrainer::StepResult EpisodeTrainer::step(const FewShotEpisode& episode, int iteration) {
  ad::Tape tape;
  auto params = encoder_.bind(tape);
  auto fwd = stage2_forward(episode, encoder_, params, config_);
  const double loss = fwd.loss.value().item();
  if (!std::isfinite(loss)) throw NumericalError("episodic training: non-finite loss at iteration " + std::to_string(iteration));
  tape.backward(fwd.loss);
  auto grads = params.gradients();
  if (!trainable_.empty())
    std::erase_if(grads, [&](const auto& kv) {
      return std::none_of(trainable_.begin(), trainable_.end(),
                          [&](const std::string& p) { return kv.first.rfind(p, 0) == 0; });
    });
  optimizer_.step(encoder_.parameters(), grads, cosine_lr(config_.lr, iteration, config_.iterations));
  return {loss, dice(fwd.predicted_query, episode.query_mask)};
}

double dice(const Mask& pred, const Mask& gt) {
  if (!pred.same_shape(gt)) throw ArgumentError("dice: shape mismatch");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace densemp
