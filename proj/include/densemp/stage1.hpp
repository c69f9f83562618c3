#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "densemp/contrastive.hpp"
#include "densemp/encoder.hpp"
#include "densemp/optimizer.hpp"
#include "densemp/transforms.hpp"

namespace densemp {

struct Stage1Config {
  double tau = 0.2;
  double lambda_dense = 0.7;
  int K = 2;  ///< Views per image.
  int S = 4;  ///< Key grid side; must match the encoder's grid_size.
  int batch_images = 8;
  int queue_size = 0;  ///< Extra negatives carried over from earlier batches (no momentum encoder).
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int iterations = 1000;
  TransformSpec augment = TransformSpec::standard();

  void validate() const;
};

/// FIFO of detached vectors tagged with the image they came from.
class NegativeQueue {
 public:
  explicit NegativeQueue(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(const std::string& image_id, const ad::Tensor& columns);
  /// Columns whose source image differs from `image_id`, as {dim, m}.
  ad::Tensor excluding(const std::string& image_id, int dim) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    std::string image_id;
    std::vector<double> vec;
  };
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

struct Stage1Forward {
  ad::Var combined;
  ad::Var global;
  ad::Var dense;
  std::vector<int> dense_negatives;   ///< Per image.
  std::vector<int> global_negatives;  ///< Per image.
  /// Detached outputs per image and view, for queue updates.
  std::vector<std::vector<ad::Tensor>> keys;
  std::vector<std::vector<ad::Tensor>> globals;
};

/// Builds the combined Stage-1 loss for a batch. views[i] holds the K augmented views of image
/// image_ids[i]. For image i and every ordered view pair (a, b), a != b: dense InfoNCE of view
/// a's keys against positives matched from view b, and global InfoNCE of g_a against g_b.
/// Negatives are every key (global vector) of every view of the other images, plus queue
/// entries from other images. Losses are averaged over images and view pairs.
Stage1Forward stage1_forward(const Encoder& encoder, const BoundParameters& params,
                             const std::vector<std::string>& image_ids,
                             const std::vector<std::vector<ImageSlice>>& views, const Stage1Config& config,
                             const NegativeQueue* dense_queue = nullptr, const NegativeQueue* global_queue = nullptr);

struct Stage1StepResult {
  double loss = 0.0;
  double global_loss = 0.0;
  double dense_loss = 0.0;
};

class Stage1Trainer {
 public:
  Stage1Trainer(Encoder& encoder, Stage1Config config);

  /// One gradient step. Views of batch[i] are sampled with derive_seed(seed, views-stream, i).
  /// Throws NumericalError on a non-finite loss.
  Stage1StepResult step(const std::vector<ImageSlice>& batch, std::uint64_t seed, int iteration);

 private:
  Encoder& encoder_;
  Stage1Config config_;
  SgdMomentum optimizer_;
  NegativeQueue dense_queue_;
  NegativeQueue global_queue_;
};

}  // namespace densemp
