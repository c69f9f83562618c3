#include "densemp/contrastive.hpp"

#include <array>
#include <cmath>

namespace densemp {
namespace {

double column_dot(const ad::Tensor& a, int i, const ad::Tensor& b, int j) {
  double acc = 0.0;
  for (int c = 0; c < a.rows(); ++c) acc += a.at(c, i) * b.at(c, j);
  return acc;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda_dense must lie in [0, 1]");
}

void check_negatives(const ad::Tensor& anchors, const ad::Tensor& negatives) {
  if (negatives.rank() != 2 || negatives.cols() == 0) throw ArgumentError("negatives must be non-empty");
  if (negatives.rows() != anchors.rows()) throw ArgumentError("negative dimension does not match keys");
}

}  // namespace

MatchMap match_positive_keys(const ad::Tensor& align_a, const ad::Tensor& align_b) {
  if (align_a.rank() != 2 || align_a.shape != align_b.shape)
    throw ArgumentError("alignment grids must share S and C");
  const int n = align_a.cols();
  // Cosine up to the positive factor 1/|a_i|, which does not change the argmax over j.
  std::vector<double> inv_norm_b(n);
  for (int j = 0; j < n; ++j) {
    const double norm = std::sqrt(column_dot(align_b, j, align_b, j));
    inv_norm_b[j] = norm > 0.0 ? 1.0 / norm : 0.0;
  }
  MatchMap match(n, 0);
  for (int i = 0; i < n; ++i) {
    double best = column_dot(align_a, i, align_b, 0) * inv_norm_b[0];
    for (int j = 1; j < n; ++j) {
      const double s = column_dot(align_a, i, align_b, j) * inv_norm_b[j];
      if (s > best) {
        best = s;
        match[i] = j;
      }
    }
  }
  return match;
}

double dense_loss(const ad::Tensor& keys_a, const ad::Tensor& keys_b, const MatchMap& match,
                  const ad::Tensor& negatives, double tau) {
  if (keys_a.shape != keys_b.shape || keys_a.rank() != 2) throw ArgumentError("key grids must share a shape");
  if (static_cast<int>(match.size()) != keys_a.cols()) throw ArgumentError("match map size mismatch");
  check_negatives(keys_a, negatives);
  if (!(tau > 0.0)) throw ArgumentError("tau must be > 0");
  std::vector<double> neg(negatives.cols());
  double total = 0.0;
  for (int i = 0; i < keys_a.cols(); ++i) {
    for (int j = 0; j < negatives.cols(); ++j) neg[j] = column_dot(keys_a, i, negatives, j);
    total += ad::info_nce_term(column_dot(keys_a, i, keys_b, match[i]), neg, tau);
  }
  return total / keys_a.cols();
}

ad::Var dense_loss(ad::Var keys_a, ad::Var keys_b, const MatchMap& match, ad::Var negatives, double tau) {
  if (static_cast<int>(match.size()) != keys_a.value().cols()) throw ArgumentError("match map size mismatch");
  return ad::info_nce(keys_a, ad::gather_cols(keys_b, match), negatives, tau);
}

double global_loss(const ad::Tensor& g, const ad::Tensor& g_pos, const ad::Tensor& g_negs, double tau) {
  if (g.shape != g_pos.shape || g.rank() != 2 || g.cols() != 1) throw ArgumentError("global embeddings must be {C', 1}");
  check_negatives(g, g_negs);
  if (!(tau > 0.0)) throw ArgumentError("tau must be > 0");
  std::vector<double> neg(g_negs.cols());
  for (int j = 0; j < g_negs.cols(); ++j) neg[j] = column_dot(g, 0, g_negs, j);
  return ad::info_nce_term(column_dot(g, 0, g_pos, 0), neg, tau);
}

ad::Var global_loss(ad::Var g, ad::Var g_pos, ad::Var g_negs, double tau) {
  return ad::info_nce(g, g_pos, g_negs, tau);
}

double combined_loss(double global, double dense, double lambda_dense) {
  check_lambda(lambda_dense);
  if (lambda_dense == 0.0) return global;
  if (lambda_dense == 1.0) return dense;
  return (1.0 - lambda_dense) * global + lambda_dense * dense;
}

ad::Var combined_loss(ad::Var global, ad::Var dense, double lambda_dense) {
  check_lambda(lambda_dense);
  if (lambda_dense == 0.0) return global;
  if (lambda_dense == 1.0) return dense;
  const std::array<ad::Var, 2> parts{global, dense};
  const std::array<double, 2> coeffs{1.0 - lambda_dense, lambda_dense};
  return ad::weighted_sum(parts, coeffs);
}

}  // namespace densemp
