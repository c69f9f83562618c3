#include "densemp/stage1.hpp"

#include <cmath>

#include "densemp/rng.hpp"

namespace densemp {

void Stage1Config::validate() const {
  if (!(tau > 0.0)) throw ConfigError("stage1.tau must be > 0");
  if (!(lambda_dense >= 0.0 && lambda_dense <= 1.0)) throw ConfigError("stage1.lambda_dense must lie in [0, 1]");
  if (K < 2) throw ConfigError("stage1.K must be >= 2");
  if (S < 1) throw ConfigError("stage1.S must be >= 1");
  if (batch_images < 1 || queue_size < 0) throw ConfigError("stage1.batch_images/queue_size out of range");
  if (batch_images < 2 && queue_size == 0) throw ConfigError("stage1 needs batch_images >= 2 or a negative queue");
  if (iterations < 0) throw ConfigError("stage1.iterations must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("stage1.lr must be >= 0");
  augment.validate();
}

void NegativeQueue::push(const std::string& image_id, const ad::Tensor& columns) {
  if (capacity_ == 0) return;
  for (int i = 0; i < columns.cols(); ++i) {
    entries_.push_back({image_id, columns.column(i)});
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

ad::Tensor NegativeQueue::excluding(const std::string& image_id, int dim) const {
  std::vector<const Entry*> kept;
  for (const auto& e : entries_)
    if (e.image_id != image_id) kept.push_back(&e);
  ad::Tensor out({dim, static_cast<int>(kept.size())});
  for (std::size_t j = 0; j < kept.size(); ++j) {
    if (static_cast<int>(kept[j]->vec.size()) != dim) throw ArgumentError("queue entry dimension mismatch");
    for (int c = 0; c < dim; ++c) out.at(c, static_cast<int>(j)) = kept[j]->vec[c];
  }
  return out;
}

Stage1Forward stage1_forward(const Encoder& encoder, const BoundParameters& params,
                             const std::vector<std::string>& image_ids,
                             const std::vector<std::vector<ImageSlice>>& views, const Stage1Config& config,
                             const NegativeQueue* dense_queue, const NegativeQueue* global_queue) {
  config.validate();
  if (config.S != encoder.config().grid_size) throw ConfigError("stage1.S must equal the encoder grid_size");
  const int B = static_cast<int>(views.size());
  if (B == 0 || image_ids.size() != views.size()) throw ArgumentError("stage1_forward: empty or inconsistent batch");
  for (const auto& v : views)
    if (static_cast<int>(v.size()) != config.K) throw ArgumentError("stage1_forward: each image needs K views");

  ad::Tape& tape = params.tape();
  std::vector<std::vector<ad::Var>> keys(B), globals(B);
  std::vector<std::vector<MatchMap>> matches(B);
  std::vector<std::vector<ad::Tensor>> align(B);
  for (int i = 0; i < B; ++i) {
    for (int a = 0; a < config.K; ++a) {
      auto features = encoder.encode(params, views[i][a]);
      keys[i].push_back(encoder.project_dense(params, features));
      globals[i].push_back(encoder.project_global(params, features));
      align[i].push_back(adaptive_pool_align(features.value(), config.S));
    }
  }

  Stage1Forward out;
  const int key_dim = encoder.config().projection_dim;
  std::vector<ad::Var> dense_terms, global_terms;
  for (int i = 0; i < B; ++i) {
    std::vector<ad::Var> dense_neg, global_neg;
    for (int j = 0; j < B; ++j) {
      if (j == i) continue;
      dense_neg.insert(dense_neg.end(), keys[j].begin(), keys[j].end());
      global_neg.insert(global_neg.end(), globals[j].begin(), globals[j].end());
    }
    if (dense_queue && dense_queue->size() > 0) {
      auto q = dense_queue->excluding(image_ids[i], key_dim);
      if (q.cols() > 0) dense_neg.push_back(tape.constant(std::move(q)));
    }
    if (global_queue && global_queue->size() > 0) {
      auto q = global_queue->excluding(image_ids[i], key_dim);
      if (q.cols() > 0) global_neg.push_back(tape.constant(std::move(q)));
    }
    if (dense_neg.empty() || global_neg.empty())
      throw ArgumentError("stage1: image '" + image_ids[i] + "' has no negatives (batch of 1 and empty queue)");
    auto dense_negatives = ad::concat_cols(dense_neg);
    auto global_negatives = ad::concat_cols(global_neg);
    out.dense_negatives.push_back(dense_negatives.value().cols());
    out.global_negatives.push_back(global_negatives.value().cols());

    for (int a = 0; a < config.K; ++a) {
      for (int b = 0; b < config.K; ++b) {
        if (a == b) continue;
        const auto match = match_positive_keys(align[i][a], align[i][b]);
        dense_terms.push_back(dense_loss(keys[i][a], keys[i][b], match, dense_negatives, config.tau));
        global_terms.push_back(global_loss(globals[i][a], globals[i][b], global_negatives, config.tau));
      }
    }
  }
  const std::vector<double> mean_coeffs(dense_terms.size(), 1.0 / dense_terms.size());
  out.dense = ad::weighted_sum(dense_terms, mean_coeffs);
  out.global = ad::weighted_sum(global_terms, mean_coeffs);
  out.combined = combined_loss(out.global, out.dense, config.lambda_dense);
  for (int i = 0; i < B; ++i) {
    out.keys.emplace_back();
    out.globals.emplace_back();
    for (int a = 0; a < config.K; ++a) {
      out.keys[i].push_back(keys[i][a].value());
      out.globals[i].push_back(globals[i][a].value());
    }
  }
  return out;
}

Stage1Trainer::Stage1Trainer(Encoder& encoder, Stage1Config config)
    : encoder_(encoder),
      config_(std::move(config)),
      optimizer_(config_.momentum, config_.weight_decay),
      dense_queue_(static_cast<std::size_t>(config_.queue_size)),
      global_queue_(static_cast<std::size_t>(config_.queue_size)) {
  config_.validate();
}

Stage1StepResult Stage1Trainer::step(const std::vector<ImageSlice>& batch, std::uint64_t seed, int iteration) {
  std::vector<std::string> ids;
  std::vector<std::vector<ImageSlice>> views;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ids.push_back(batch[i].slice_id);
    views.push_back(sample_views(batch[i], config_.K, config_.augment, derive_seed(seed, streams::kStage1Views, i)));
  }
  ad::Tape tape;
  auto params = encoder_.bind(tape);
  auto fwd = stage1_forward(encoder_, params, ids, views, config_, &dense_queue_, &global_queue_);
  Stage1StepResult result{fwd.combined.value().item(), fwd.global.value().item(), fwd.dense.value().item()};
  if (!std::isfinite(result.loss))
    throw NumericalError("stage1: non-finite loss at iteration " + std::to_string(iteration));
  tape.backward(fwd.combined);
  optimizer_.step(encoder_.parameters(), params.gradients(), cosine_lr(config_.lr, iteration, config_.iterations));
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int a = 0; a < config_.K; ++a) {
      dense_queue_.push(ids[i], fwd.keys[i][a]);
      global_queue_.push(ids[i], fwd.globals[i][a]);
    }
  return result;
}

}  // namespace densemp
