#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "densemp/autodiff.hpp"
#include "densemp/encoder.hpp"
#include "densemp/optimizer.hpp"
#include "densemp/superpixel.hpp"

namespace densemp {

struct PrototypeConfig {
  int window = 2;                    ///< Local pooling window side, in feature cells.
  double coverage_threshold = 0.95;  ///< Minimum class coverage for a local prototype.
  double alpha = 20.0;               ///< Cosine similarity scaler.

  void validate() const;
};

/// Prototype columns: index 0 is the global (mask-weighted) prototype, the rest are local.
struct PrototypeSet {
  ad::Tensor fg;  ///< {C, n_fg}
  ad::Tensor bg;  ///< {C, n_bg}
  std::vector<std::pair<int, int>> fg_cells;  ///< Window (row, col) of each local fg prototype.
  std::vector<std::pair<int, int>> bg_cells;
  std::pair<int, int> pooling_window{2, 2};
  double coverage_threshold = 0.95;
};

/// Class weights of a support mask at feature resolution.
struct FeatureMaskWeights {
  std::vector<double> soft;  ///< Area-averaged foreground fraction per feature cell.
  std::vector<double> fg;    ///< Thresholded at 0.5, or `soft` when thresholding empties it.
  std::vector<double> bg;    ///< 1 - thresholded, or 1 - soft when thresholding empties it.
};

/// Throws EpisodeSkipError when either class ends up with zero total weight.
FeatureMaskWeights feature_mask_weights(const Mask& mask, int h, int w);

struct PrototypeVars {
  ad::Var fg;
  ad::Var bg;
  std::vector<std::pair<int, int>> fg_cells;
  std::vector<std::pair<int, int>> bg_cells;
};

/// Masked average pooling (global) plus windowed local prototypes kept where the class covers
/// at least coverage_threshold of the window. Differentiable w.r.t. the features.
PrototypeVars extract_prototypes(ad::Var features, const Mask& support_mask, const PrototypeConfig& cfg);
PrototypeSet extract_prototypes(const FeatureMap& features, const Mask& support_mask, const PrototypeConfig& cfg);

struct SegmentationVars {
  ad::Var fg_feature;  ///< {1, h*w} foreground probability at feature resolution.
  ad::Var fg_full;     ///< {1, H*W} bilinear upsampling of fg_feature.
  ad::Var bg_full;     ///< {1, H*W} background probability, computed without 1 - p_fg.
  int height = 0;
  int width = 0;
};

/// Per pixel: score_c = alpha * max over class-c prototypes of cos(feature, prototype); softmax
/// over {bg, fg}; upsampled to height x width.
SegmentationVars similarity_segment(const PrototypeVars& prototypes, ad::Var query_features, double alpha,
                                    int height, int width);

struct SegmentationLogits {
  Grid<double> fg_feature;  ///< Foreground probability at feature resolution.
  Grid<double> fg_full;     ///< Upsampled foreground probability.
  Grid<double> bg_full;     ///< Upsampled background probability.
  /// Per-pixel class scores (alpha * max cosine) at feature resolution.
  Grid<double> bg_score;
  Grid<double> fg_score;
};

SegmentationLogits similarity_segment(const PrototypeSet& prototypes, const FeatureMap& query_features, double alpha,
                                      int height, int width);

/// Mean pixelwise negative log-likelihood of the target under the foreground probabilities.
double ce_loss(const Grid<double>& fg_probability, const Mask& target);
double ce_loss(const Grid<double>& fg_probability, const Grid<double>& bg_probability, const Mask& target);
ad::Var ce_loss(const SegmentationVars& seg, const Mask& target);

/// Argmax of the upsampled probabilities; p_fg == 0.5 goes to background.
Mask predict_mask(const Grid<double>& fg_probability);
Mask predict_mask(const SegmentationVars& seg);
Mask predict_mask(const PrototypeSet& prototypes, const FeatureMap& query_features, double alpha, int height,
                  int width);

/// Prototype alignment regularization: prototypes from (query features, predicted query mask)
/// segment the support; cross-entropy against the support mask. Returns a constant 0 when the
/// predicted mask leaves either class without weight.
ad::Var par_loss(ad::Var support_features, const Mask& support_mask, ad::Var query_features,
                 const Mask& predicted_query_mask, const PrototypeConfig& cfg);

struct Stage2Config {
  double lambda_par = 1.0;
  PrototypeConfig prototypes;
  int iterations = 2000;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  FelzParams superpixels;
  int min_fg = 6;  ///< Minimum pseudo-label size in pixels.
  TransformSpec episode_transform = TransformSpec::standard();

  void validate() const;
};

struct Stage2Forward {
  ad::Var loss;
  ad::Var ce;
  std::optional<ad::Var> par;
  Mask predicted_query;
};

/// L = L_CE + lambda_par * L_PA on one episode. With lambda_par = 0 the loss is L_CE itself.
Stage2Forward stage2_forward(const FewShotEpisode& episode, const Encoder& encoder, const BoundParameters& params,
                             const Stage2Config& cfg);
double stage2_loss(const FewShotEpisode& episode, const Encoder& encoder, const Stage2Config& cfg);

/// Episodic trainer used for Stage 2 and fine-tuning.
class EpisodeTrainer {
 public:
  EpisodeTrainer(Encoder& encoder, Stage2Config config);

  struct StepResult {
    double loss = 0.0;
    double query_dice = 0.0;
  };
  /// Throws NumericalError on a non-finite loss.
  StepResult step(const FewShotEpisode& episode, int iteration);

  /// Restricts updates to parameters whose name starts with one of the prefixes. Empty = all.
  void set_trainable_prefixes(std::vector<std::string> prefixes) { trainable_ = std::move(prefixes); }

 private:
  Encoder& encoder_;
  Stage2Config config_;
  SgdMomentum optimizer_;
  std::vector<std::string> trainable_;
};

/// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty.
double dice(const Mask& pred, const Mask& gt);

}  // namespace densemp
