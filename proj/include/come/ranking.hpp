// Pairwise logistic ranking loss over patch scores,
//   L = 1/|P| * sum_{(i,j) in P} log(1 + exp(s_j - s_i)),
// where every pair (i, j) has teacher(i) > teacher(j). Plus the MSE
// alternative and the mask IoU used to compare predicted and teacher masks.
#pragma once

#include "come/mask.hpp"
#include "come/rng.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace come {

/// Ordered patch pairs (i, j) with teacher(i) > teacher(j). No i == j, no duplicates.
struct RankingPairSet {
  std::vector<std::pair<Index, Index>> pairs;
  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Every ordered pair with a strict teacher preference.
RankingPairSet all_pairs(std::span<const float> teacher);

/// At most `budget` distinct pairs drawn uniformly; falls back to all_pairs
/// when the budget covers every unordered pair.
RankingPairSet sample_pairs(std::span<const float> teacher, std::size_t budget, Rng& rng);

/// log(1 + exp(m)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar m) {
  return std::max(m, Scalar(0)) + std::log1p(std::exp(-std::abs(m)));
}

template <typename Scalar>
Scalar sigmoid(Scalar m) {
  if (m >= 0) return Scalar(1) / (Scalar(1) + std::exp(-m));
  const Scalar e = std::exp(m);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar ranking_loss(const Vector<Scalar>& scores, const RankingPairSet& pairs) {
  if (pairs.empty()) throw DomainError("ranking loss over an empty pair set");
  double total = 0.0;
  for (const auto& [i, j] : pairs.pairs) {
    total += static_cast<double>(softplus(scores(j) - scores(i)));
  }
  return static_cast<Scalar>(total / static_cast<double>(pairs.size()));
}

/// dL/ds: +sigmoid(s_j - s_i)/|P| on j and the negation on i, summed over pairs.
template <typename Scalar>
Vector<Scalar> ranking_loss_grad(const Vector<Scalar>& scores, const RankingPairSet& pairs) {
  if (pairs.empty()) throw DomainError("ranking loss over an empty pair set");
  Vector<Scalar> grad = Vector<Scalar>::Zero(scores.size());
  const Scalar inv = Scalar(1) / static_cast<Scalar>(pairs.size());
  for (const auto& [i, j] : pairs.pairs) {
    const Scalar g = sigmoid(scores(j) - scores(i)) * inv;
    grad(j) += g;
    grad(i) -= g;
  }
  return grad;
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  Vector<Scalar> grad;
};

/// Mean squared error and its gradient 2 (pred - teacher) / N.
template <typename Scalar>
LossAndGrad<Scalar> mse_loss(const Vector<Scalar>& pred, const Vector<Scalar>& teacher) {
  if (pred.size() != teacher.size()) throw DimensionError("mse operands differ in length");
  if (pred.size() == 0) throw DomainError("mse over an empty set");
  const Vector<Scalar> diff = pred - teacher;
  const Scalar n = static_cast<Scalar>(pred.size());
  return {static_cast<Scalar>(diff.template cast<double>().squaredNorm() / static_cast<double>(n)),
          diff * (Scalar(2) / n)};
}

/// |a AND b| / |a OR b| pooled over every (sample, group); 1 when both are empty.
double mask_iou(const GroupFlags& a, const GroupFlags& b);
double mask_iou(const MergeMask& a, const MergeMask& b);

}  // namespace come
