#pragma once

#include "sacn/sacn.hpp"

#include <random>
#include <utility>
#include <vector>

namespace sacn::testing {

inline Matrix<double> random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

/// Symmetric Erdos-Renyi adjacency without self-loops.
inline CsrPattern random_graph(Index n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution edge(p);
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if (edge(rng)) {
        pairs.emplace_back(i, j);
        pairs.emplace_back(j, i);
      }
    }
  }
  return CsrPattern::from_pairs(n, n, std::move(pairs));
}

inline CsrPattern undirected(Index n, const std::vector<std::pair<Index, Index>>& edges) {
  std::vector<std::pair<Index, Index>> pairs;
  for (auto [a, b] : edges) {
    pairs.emplace_back(a, b);
    pairs.emplace_back(b, a);
  }
  return CsrPattern::from_pairs(n, n, std::move(pairs));
}

inline Matrix<double> dense(const CsrPattern& p) {
  Matrix<double> d = Matrix<double>::Zero(p.rows, p.cols);
  for (Index i = 0; i < p.rows; ++i) {
    for (Index e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) d(i, p.col_idx[e]) = 1.0;
  }
  return d;
}

/// Row-stochastic matrix with strictly positive entries.
inline Matrix<double> random_stochastic(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  for (Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

/// Independent scalar-loop evaluation of the consensus objective.
inline double brute_force_sacn(const Matrix<double>& z1, const Matrix<double>& z2, const Matrix<double>& adj,
                               double lambda, bool self_pairs = true) {
  const Index n = z1.rows(), d = z1.cols();
  auto normalize = [&](const Matrix<double>& z) {
    Matrix<double> out(n, d);
    for (Index c = 0; c < d; ++c) {
      double mean = 0;
      for (Index i = 0; i < n; ++i) mean += z(i, c);
      mean /= static_cast<double>(n);
      double var = 0;
      for (Index i = 0; i < n; ++i) var += (z(i, c) - mean) * (z(i, c) - mean);
      const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-8;
      for (Index i = 0; i < n; ++i) out(i, c) = (z(i, c) - mean) / sd / std::sqrt(static_cast<double>(n));
    }
    return out;
  };
  const Matrix<double> a = normalize(z1), b = normalize(z2);
  double cor = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double w = adj(i, j) + ((self_pairs && i == j) ? 1.0 : 0.0);
      if (w == 0) continue;
      double dot = 0;
      for (Index c = 0; c < d; ++c) dot += a(i, c) * b(j, c);
      cor -= w * dot;
    }
  }
  double de = 0;
  for (const Matrix<double>* z : {&a, &b}) {
    for (Index p = 0; p < d; ++p) {
      for (Index q = 0; q < d; ++q) {
        double g = 0;
        for (Index i = 0; i < n; ++i) g += (*z)(i, p) * (*z)(i, q);
        const double r = g - (p == q ? 1.0 : 0.0);
        de += r * r;
      }
    }
  }
  return cor + lambda * de;
}

/// Evaluates the sparse loss_sacn on plain matrices.
inline double sparse_sacn(const Matrix<double>& z1, const Matrix<double>& z2, const CsrPattern& adj,
                          double lambda, bool self_pairs = true) {
  ad::Tape<double> tape;
  const auto pairs = ConsensusPairs::from_adjacency(adj, self_pairs);
  return loss_sacn(tape.constant(z1), tape.constant(z2), pairs, lambda).total.scalar();
}

}  // namespace sacn::testing
