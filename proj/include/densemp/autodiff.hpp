#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tape records every operation of one forward pass; Tape::backward walks the records in
// reverse. Feature tensors use the layouts
//   image-like  {C, H, W}   (channel planes)
//   column sets {C, n}      (n vectors of dimension C stored as columns)
// and scalars have shape {1}.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "densemp/grid.hpp"

namespace densemp::ad {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }
  double item() const;

  /// For {C, n} tensors.
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  std::vector<double> column(int c) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
  int id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is accumulated by backward().
  Var variable(Tensor value);

  /// Seeds d(out)/d(out) = 1 for a scalar and propagates to every node that requires a gradient.
  void backward(Var scalar_out);

  const Tensor& value(int id) const { return nodes_[id].value; }
  /// Zero tensor of the node's shape if nothing flowed into it.
  const Tensor& grad(int id);
  const Tensor& grad(Var v) { return grad(v.id()); }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Accumulation target for op backward functions; allocated on first use.
  Tensor& grad_buffer(int id);

  /// Records an op. `backward` is called once, after the node's gradient is complete.
  Var record(Tensor value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> backward);
  Var record(Tensor value, std::span<const Var> inputs, std::function<void(Tape&, int)> backward);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, int)> backward;
  };
  std::deque<Node> nodes_;
};

// Image-like ops ({C, H, W}).

/// 'Same' convolution, stride 1, odd square kernel w {Co, Ci, k, k}, bias b {Co}.
Var conv2d(Var x, Var w, Var b);
/// Normalization over all C*H*W entries with per-channel affine gamma/beta {C}.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var relu(Var x);
/// 2x2 average pooling, stride 2 (H and W must be even).
Var avg_pool2(Var x);
/// Adaptive average pooling to S x S cells; cell i spans [floor(i*h/S), ceil((i+1)*h/S)).
/// Returns {C, S*S}, cells in row-major order.
Var adaptive_avg_pool(Var x, int S);
/// {C, H, W} -> {C, H*W}.
Var flatten_spatial(Var x);

// Column-set ops ({C, n}).

/// Mean over columns -> {C, 1}.
Var mean_cols(Var x);
/// W {Co, Ci} x + b {Co}, applied to every column.
Var linear(Var x, Var w, Var b);
/// Each column divided by (its L2 norm + eps).
Var normalize_cols(Var x, double eps = 1e-12);
Var gather_cols(Var x, std::vector<int> index);
Var concat_cols(std::span<const Var> parts);
/// Weighted column average sum_i w_i x_i / sum_i w_i -> {C, 1}. Weights are constants.
Var weighted_mean_cols(Var x, std::vector<double> weights);
/// a^T b for a {C, p}, b {C, n} -> {p, n}.
Var matmul_tn(Var a, Var b);
/// Column-wise max over rows [r0, r1) -> {1, n}. Ties go to the lowest row.
Var max_rows(Var x, int r0, int r1);
/// alpha * (fg - bg) passed through the logistic function: the foreground probability of a
/// two-class softmax over scores (alpha*bg, alpha*fg). Shapes {1, n}.
Var two_class_fg_probability(Var fg, Var bg, double alpha);
/// {1, h*w} -> {1, H*W} bilinear, half-pixel centers, clamped edges.
Var upsample_bilinear(Var x, int h, int w, int H, int W);

// Losses and scalar arithmetic.

/// Mean over columns i of -log( e^{a_i.p_i/tau} / (e^{a_i.p_i/tau} + sum_j e^{a_i.n_j/tau}) ).
Var info_nce(Var anchors, Var positives, Var negatives, double tau);
/// Mean of -log p (target 1) or -log(1-p) (target 0), probabilities clamped to [1e-12, 1].
Var binary_cross_entropy(Var p_fg, std::span<const std::uint8_t> target);
/// Same, with the background probability supplied separately. Computing 1 - p near p = 1
/// loses every significant digit once the softmax saturates.
Var binary_cross_entropy(Var p_fg, Var p_bg, std::span<const std::uint8_t> target);
Var add(Var a, Var b);
Var scale(Var a, double s);
/// sum_i coeffs_i * parts_i for scalars.
Var weighted_sum(std::span<const Var> parts, std::span<const double> coeffs);

// Plain kernels shared by the ops and by non-differentiable callers.

/// -log softmax_0 of the logits (pos/tau, neg_j/tau), computed stably.
double info_nce_term(double pos_dot, std::span<const double> neg_dots, double tau);

/// Bilinear sampling weights for one output coordinate along one axis.
struct LerpTap {
  int i0, i1;
  double w0, w1;
};
std::vector<LerpTap> bilinear_taps(int in_size, int out_size);

}  // namespace densemp::ad
