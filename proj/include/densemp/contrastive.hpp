#pragma once

#include <vector>

#include "densemp/autodiff.hpp"

namespace densemp {

/// For each alignment vector of view a (column i), the index j of the most cosine-similar
/// alignment vector of view b. Ties resolve to the lowest j.
using MatchMap = std::vector<int>;

MatchMap match_positive_keys(const ad::Tensor& align_a, const ad::Tensor& align_b);

/// Dense contrastive (InfoNCE) loss averaged over the key grid of view a:
///   mean_i -log( e^{t_i.t+_i/tau} / (e^{t_i.t+_i/tau} + sum_j e^{t_i.n_j/tau}) )
/// where t+_i = keys_b[:, match[i]] and negatives are columns of {C', m}. The temperature
/// divides every exponent, the positive term of the denominator included.
double dense_loss(const ad::Tensor& keys_a, const ad::Tensor& keys_b, const MatchMap& match,
                  const ad::Tensor& negatives, double tau);
ad::Var dense_loss(ad::Var keys_a, ad::Var keys_b, const MatchMap& match, ad::Var negatives, double tau);

/// Single InfoNCE term on global embeddings ({C', 1} each; negatives {C', m}).
double global_loss(const ad::Tensor& g, const ad::Tensor& g_pos, const ad::Tensor& g_negs, double tau);
ad::Var global_loss(ad::Var g, ad::Var g_pos, ad::Var g_negs, double tau);

/// (1 - lambda) * Lg + lambda * Lt. The endpoints return the operand itself.
double combined_loss(double global, double dense, double lambda_dense);
ad::Var combined_loss(ad::Var global, ad::Var dense, double lambda_dense);

}  // namespace densemp
