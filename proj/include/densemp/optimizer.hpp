#pragma once

#include "densemp/encoder.hpp"

namespace densemp {

/// Momentum SGD. L2 weight decay is added to the gradient; an optional global-norm clip is
/// applied first (max_grad_norm <= 0 disables it).
class SgdMomentum {
 public:
  SgdMomentum(double momentum = 0.9, double weight_decay = 1e-4, double max_grad_norm = 5.0)
      : momentum_(momentum), weight_decay_(weight_decay), max_grad_norm_(max_grad_norm) {}

  /// Throws NumericalError if any gradient is non-finite.
  void step(ParameterSet& params, const ParameterSet& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  double max_grad_norm_;
  ParameterSet velocity_;
};

/// lr * 0.5 * (1 + cos(pi * step / total)).
double cosine_lr(double base_lr, int step, int total);

}  // namespace densemp
