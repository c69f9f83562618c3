#include "densemp/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace densemp {

void SgdMomentum::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  double norm2 = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data) {
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
      norm2 += v * v;
    }
  const double norm = std::sqrt(norm2);
  const double clip = (max_grad_norm_ > 0.0 && norm > max_grad_norm_) ? max_grad_norm_ / norm : 1.0;

  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    auto& vel = velocity_[name];
    if (vel.shape != p.shape) vel = ad::Tensor(p.shape, 0.0);
    const auto& g = git->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = clip * g.data[i] + weight_decay_ * p.data[i];
      vel.data[i] = momentum_ * vel.data[i] + d;
      p.data[i] -= lr * vel.data[i];
    }
  }
}

double cosine_lr(double base_lr, int step, int total) {
  if (total <= 0) return base_lr;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
}

}  // namespace densemp
