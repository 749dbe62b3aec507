#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "doramos/autodiff.hpp"
#include "doramos/error.hpp"
#include "doramos/labels.hpp"

namespace doramos {

// Expected score sum_k softmax(logits)_k c_k, differentiable through both.
inline Var expected_score(Var logits, const ScoreBins& bins) {
  if (logits.cols() != bins.K) throw ShapeError("expected_score: logits width != K");
  Tensor centers = Tensor::matrix(bins.K, 1);
  for (std::size_t k = 0; k < bins.K; ++k) centers[k] = bins.centers[k];
  return ad::matmul(ad::softmax(logits, 1), logits.tape->constant(std::move(centers)));
}

inline Var loss_l1(Var pred_score, double s) { return ad::abs(ad::add_scalar(pred_score, -s)); }

// -sum_k y_k log softmax(logits)_k
inline Var loss_soft_ce(Var logits, std::span<const double> target) {
  if (logits.rows() != 1 || logits.cols() != target.size()) {
    throw ShapeError("loss_soft_ce: logits " + shape_str(logits.shape()) + " vs target of " +
                     std::to_string(target.size()));
  }
  const Var y = logits.tape->constant(Tensor::row({target.begin(), target.end()}));
  return ad::scale(ad::sum(ad::mul(ad::log_softmax(logits, 1), y)), -1.0);
}

inline Var loss_hard_ce(Var logits, std::size_t index) {
  if (logits.rows() != 1 || index >= logits.cols()) throw ShapeError("loss_hard_ce: index outside logits");
  return ad::scale(ad::slice_cols(ad::log_softmax(logits, 1), index, 1), -1.0);
}

// Mean binary cross-entropy of sigmoid(logit_j) against level j, computed as
// softplus(x) - y x.
inline Var loss_coral(Var logits, std::span<const double> levels) {
  if (logits.rows() != 1 || logits.cols() != levels.size()) {
    throw ShapeError("loss_coral: expected " + std::to_string(levels.size()) + " logits, got " +
                     shape_str(logits.shape()));
  }
  const Var y = logits.tape->constant(Tensor::row({levels.begin(), levels.end()}));
  const Var per_level = ad::sub(ad::softplus(logits), ad::mul(logits, y));
  return ad::scale(ad::sum(per_level), 1.0 / static_cast<double>(levels.size()));
}

}  // namespace doramos
