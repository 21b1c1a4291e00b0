#pragma once

#include "sacn/autodiff.hpp"
#include "sacn/pseudolabels.hpp"
#include "sacn/sparse.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace sacn {

struct LossWeights {
  double lambda = 1e-3;  // decorrelation trade-off
  double alpha1 = 1.0;   // consensus objective
  double alpha2 = 0.5;   // weak-to-strong supervision

  void validate() const {
    if (lambda < 0 || alpha1 < 0 || alpha2 < 0) throw std::invalid_argument("LossWeights: negative weight");
  }
};

/// Node pairs (i, j) whose cross-view inner products enter the consensus
/// term: the graph edges, plus (i, i) when self-pairs are included.
struct ConsensusPairs {
  CsrPattern pattern;

  static ConsensusPairs from_adjacency(const CsrPattern& adjacency, bool include_self_pairs = true) {
    return ConsensusPairs{include_self_pairs ? adjacency.with_self_loops() : adjacency};
  }
};

/// Column z-score (population std) followed by 1/sqrt(n) scaling, so that
/// Z^T Z is the column correlation matrix.
template <class T>
ad::Var<T> normalize_latent(ad::Var<T> z) {
  const Index n = z.rows();
  if (n < 2) throw std::invalid_argument("normalize_latent: need at least two nodes");
  return ad::scalar_multiply(ad::zscore_columns(z), T(1) / std::sqrt(static_cast<T>(n)));
}

/// -sum_ij p_ij <z1_i, z2_j>, computed as -sum(Z1 .* (P Z2)).
template <class T>
ad::Var<T> loss_cor(ad::Var<T> z1, ad::Var<T> z2, const ConsensusPairs& pairs) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) throw ad::ShapeError("loss_cor: shape mismatch");
  if (pairs.pattern.rows != z1.rows()) throw ad::ShapeError("loss_cor: node count mismatch");
  ad::Var<T> aggregated = ad::sparse_dense_matmul(pairs.pattern, z2);
  return ad::scalar_multiply(ad::sum(ad::elementwise_multiply(z1, aggregated)), T(-1));
}

/// ||Z1^T Z1 - I||_F^2 + ||Z2^T Z2 - I||_F^2.
template <class T>
ad::Var<T> loss_de(ad::Var<T> z1, ad::Var<T> z2) {
  auto& tape = *z1.tape();
  const Index d = z1.cols();
  ad::Var<T> eye = tape.constant(Matrix<T>::Identity(d, d));
  auto off_identity = [&](ad::Var<T> z) {
    return ad::frobenius_sq(ad::subtract(ad::matmul(ad::transpose(z), z), eye));
  };
  return ad::add(off_identity(z1), off_identity(z2));
}

template <class T>
struct SacnTerms {
  ad::Var<T> cor;
  ad::Var<T> de;
  ad::Var<T> total;  // cor + lambda * de
};

/// Structure-aware consensus objective on raw latent features; both views
/// are normalized first.
template <class T>
SacnTerms<T> loss_sacn(ad::Var<T> z1, ad::Var<T> z2, const ConsensusPairs& pairs, double lambda) {
  ad::Var<T> n1 = normalize_latent(z1);
  ad::Var<T> n2 = normalize_latent(z2);
  ad::Var<T> cor = loss_cor(n1, n2, pairs);
  ad::Var<T> de = loss_de(n1, n2);
  return {cor, de, ad::add(cor, ad::scalar_multiply(de, static_cast<T>(lambda)))};
}

/// One-hot rows for the given labels.
template <class T>
Matrix<T> one_hot(std::span<const int> classes, Index num_classes) {
  Matrix<T> t = Matrix<T>::Zero(static_cast<Index>(classes.size()), num_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] >= num_classes) throw std::invalid_argument("one_hot: class out of range");
    t(static_cast<Index>(i), classes[i]) = T(1);
  }
  return t;
}

/// Summed cross-entropy -sum_i sum_j t_ij ln y_ij over the given rows of Y.
template <class T>
ad::Var<T> loss_sup(ad::Var<T> y, const Matrix<T>& targets, std::vector<Index> labeled) {
  if (labeled.empty()) throw std::invalid_argument("loss_sup: empty labeled set");
  if (targets.rows() != static_cast<Index>(labeled.size()) || targets.cols() != y.cols()) {
    throw ad::ShapeError("loss_sup: targets do not match labeled rows");
  }
  auto& tape = *y.tape();
  ad::Var<T> picked = ad::log(ad::gather_rows(y, std::move(labeled)));
  ad::Var<T> t = tape.constant(targets);
  return ad::scalar_multiply(ad::sum(ad::elementwise_multiply(t, picked)), T(-1));
}

/// Cross-entropy of both strong views against the hard pseudolabels. The
/// targets are constants; an empty selection contributes 0.
template <class T>
ad::Var<T> loss_w2s(const PseudoLabelSet& pseudo, ad::Var<T> y1, ad::Var<T> y2) {
  auto& tape = *y1.tape();
  if (pseudo.empty()) return tape.scalar_constant(T(0));
  const Matrix<T> targets = pseudo.targets<T>(y1.cols());
  return ad::add(loss_sup(y1, targets, pseudo.indices), loss_sup(y2, targets, pseudo.indices));
}

/// sup + alpha1 * sacn.
template <class T>
ad::Var<T> loss_stage_one(ad::Var<T> sup, ad::Var<T> sacn, const LossWeights& w) {
  return ad::add(sup, ad::scalar_multiply(sacn, static_cast<T>(w.alpha1)));
}

/// sup + alpha1 * sacn + alpha2 * w2s.
template <class T>
ad::Var<T> loss_stage_two(ad::Var<T> sup, ad::Var<T> sacn, ad::Var<T> w2s, const LossWeights& w) {
  return ad::add(loss_stage_one(sup, sacn, w), ad::scalar_multiply(w2s, static_cast<T>(w.alpha2)));
}

}  // namespace sacn
