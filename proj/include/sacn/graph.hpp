#pragma once

#include "sacn/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sacn {

inline constexpr int kUnlabeled = -1;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Disjoint node index lists. Lists are kept sorted.
struct Split {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;

  bool empty() const { return train.empty() && val.empty() && test.empty(); }
  friend bool operator==(const Split&, const Split&) = default;
};

struct SplitSpec {
  double label_rate = 0.0;
  Index val_size = 500;
  Index test_size = 1000;
  std::uint64_t seed = 0;
};

/// An attributed undirected graph with labels and a train/val/test split.
///
/// The adjacency is binary and symmetric with an empty diagonal; every
/// undirected edge is stored in both directions.
struct GraphBundle {
  std::string name;
  Index num_nodes = 0;
  Index num_features = 0;
  Index num_classes = 0;
  CsrMatrix<double> features;
  CsrPattern adjacency;
  std::vector<int> labels;
  Split split;

  Index num_edges() const { return adjacency.nnz() / 2; }
  /// l: number of labeled training nodes.
  Index labeled_count() const { return static_cast<Index>(split.train.size()); }
  /// u = n - l.
  Index unlabeled_count() const { return num_nodes - labeled_count(); }

  /// Nodes outside the training set, ascending.
  std::vector<Index> unlabeled_nodes() const {
    std::vector<char> in_train(static_cast<std::size_t>(num_nodes), 0);
    for (Index i : split.train) in_train[i] = 1;
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(unlabeled_count()));
    for (Index i = 0; i < num_nodes; ++i) {
      if (!in_train[i]) out.push_back(i);
    }
    return out;
  }

  void validate() const {
    if (num_nodes < 0 || num_features < 0 || num_classes < 0) {
      throw GraphError("bundle: negative dimension");
    }
    if (adjacency.rows != num_nodes || adjacency.cols != num_nodes) {
      throw GraphError("bundle: adjacency is not n x n");
    }
    if (!adjacency.is_symmetric()) throw GraphError("bundle: adjacency is not symmetric");
    if (adjacency.has_diagonal_entries()) throw GraphError("bundle: adjacency has self-loops");
    if (features.rows() != num_nodes || features.cols() != num_features) {
      throw GraphError("bundle: features are not n x m");
    }
    if (static_cast<Index>(labels.size()) != num_nodes) {
      throw GraphError("bundle: label vector has wrong length");
    }
    for (int y : labels) {
      if (y != kUnlabeled && (y < 0 || y >= num_classes)) {
        throw GraphError("bundle: label outside [0, k)");
      }
    }
    std::vector<char> seen(static_cast<std::size_t>(num_nodes), 0);
    auto check_list = [&](const std::vector<Index>& list, const char* which) {
      for (Index i : list) {
        if (i < 0 || i >= num_nodes) {
          throw GraphError(std::string("bundle: ") + which + " index out of range");
        }
        if (seen[i]) throw GraphError(std::string("bundle: splits are not disjoint at node ") +
                                      std::to_string(i));
        seen[i] = 1;
      }
    };
    check_list(split.train, "train");
    check_list(split.val, "val");
    check_list(split.test, "test");
    for (Index i : split.train) {
      if (labels[i] == kUnlabeled) {
        throw GraphError("bundle: train node " + std::to_string(i) + " has no label");
      }
    }
  }
};

/// Renormalized adjacency D^-1/2 (A + I) D^-1/2 where D is the degree
/// matrix of A + I.
template <class T = double>
CsrMatrix<T> renormalized_adjacency(const CsrPattern& adjacency) {
  CsrMatrix<T> out;
  out.pattern = adjacency.with_self_loops();
  const auto& p = out.pattern;
  std::vector<T> inv_sqrt_degree(static_cast<std::size_t>(p.rows));
  for (Index r = 0; r < p.rows; ++r) {
    inv_sqrt_degree[r] = T(1) / std::sqrt(static_cast<T>(p.degree(r)));
  }
  out.values.resize(static_cast<std::size_t>(p.nnz()));
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      out.values[k] = inv_sqrt_degree[r] * inv_sqrt_degree[p.col_idx[k]];
    }
  }
  return out;
}

/// Low-pass filter X <- Ahat^c X, applied as c sparse-dense products.
template <class T>
Matrix<T> smooth_features(Matrix<T> features, const CsrMatrix<T>& ahat, int strength) {
  if (strength < 0) throw std::invalid_argument("smooth_features: negative filter strength");
  if (ahat.rows() != features.rows() || ahat.cols() != features.rows()) {
    throw std::invalid_argument("smooth_features: shape mismatch");
  }
  for (int i = 0; i < strength; ++i) features = multiply(ahat, features);
  return features;
}

/// Smoothed features Ahat^c X held in factored form, optionally with some
/// columns zeroed.
///
/// The dense product is never formed. Projections go through the sparse
/// factors instead: (Ahat^c X M) W = Ahat^c (X (M W)), where M zeroes the
/// masked columns. For sparse X and a narrow W this is far cheaper than the
/// dense n x m product, and the result is the same up to rounding.
/// Copies share the underlying storage.
template <class T>
class SmoothedFeatures {
 public:
  SmoothedFeatures() = default;

  SmoothedFeatures(CsrMatrix<T> raw, CsrMatrix<T> ahat, int strength) {
    if (strength < 0) throw std::invalid_argument("SmoothedFeatures: negative filter strength");
    if (ahat.rows() != raw.rows() || ahat.cols() != raw.rows()) {
      throw std::invalid_argument("SmoothedFeatures: shape mismatch");
    }
    data_ = std::make_shared<const Storage>(Storage{std::move(raw), std::move(ahat), strength});
  }

  Index rows() const { return data_ ? data_->raw.rows() : 0; }
  Index cols() const { return data_ ? data_->raw.cols() : 0; }
  int strength() const { return data_ ? data_->strength : 0; }
  const std::vector<Index>& masked_dims() const { return masked_; }

  /// Same features with `dims` (sorted, in range) zeroed on top of any
  /// existing mask.
  SmoothedFeatures masked(const std::vector<Index>& dims) const {
    SmoothedFeatures out = *this;
    for (Index d : dims) {
      if (d < 0 || d >= cols()) throw std::invalid_argument("SmoothedFeatures: masked dimension out of range");
    }
    std::vector<Index> merged;
    std::set_union(masked_.begin(), masked_.end(), dims.begin(), dims.end(), std::back_inserter(merged));
    out.masked_ = std::move(merged);
    return out;
  }

  /// (Ahat^c X M) w
  Matrix<T> project(const Matrix<T>& w) const {
    if (w.rows() != cols()) throw std::invalid_argument("SmoothedFeatures::project: shape mismatch");
    Matrix<T> out;
    if (masked_.empty()) {
      out = multiply(data_->raw, w);
    } else {
      Matrix<T> kept = w;
      for (Index d : masked_) kept.row(d).setZero();
      out = multiply(data_->raw, kept);
    }
    for (int i = 0; i < data_->strength; ++i) out = multiply(data_->ahat, out);
    return out;
  }

  /// (Ahat^c X M)^T g
  Matrix<T> project_transpose(const Matrix<T>& g) const {
    if (g.rows() != rows()) throw std::invalid_argument("SmoothedFeatures::project_transpose: shape mismatch");
    Matrix<T> back = g;
    for (int i = 0; i < data_->strength; ++i) back = multiply_transpose(data_->ahat, back);
    Matrix<T> out = multiply_transpose(data_->raw, back);
    for (Index d : masked_) out.row(d).setZero();
    return out;
  }

  /// Dense Ahat^c X M, for inspection and tests.
  Matrix<T> to_dense() const {
    Matrix<T> dense = smooth_features<T>(data_->raw.to_dense(), data_->ahat, data_->strength);
    for (Index d : masked_) dense.col(d).setZero();
    return dense;
  }

 private:
  struct Storage {
    CsrMatrix<T> raw;
    CsrMatrix<T> ahat;
    int strength = 0;
  };
  std::shared_ptr<const Storage> data_;
  std::vector<Index> masked_;
};

struct SbmSpec {
  Index num_nodes = 0;
  Index num_classes = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  Index num_features = 16;
  double feature_flip = 0.0;
  std::uint64_t seed = 0;
};

/// Stochastic block model fixture. Node i belongs to class i mod k. The
/// prototype of class c sets every feature dimension d with d mod k == c;
/// each bit is then flipped independently with probability feature_flip.
inline GraphBundle generate_sbm(const SbmSpec& spec) {
  auto is_prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!is_prob(spec.p_in) || !is_prob(spec.p_out) || !is_prob(spec.feature_flip)) {
    throw std::invalid_argument("generate_sbm: probabilities must lie in [0, 1]");
  }
  if (spec.p_in <= spec.p_out) throw std::invalid_argument("generate_sbm: requires p_in > p_out");
  if (spec.num_nodes < 1 || spec.num_classes < 1 || spec.num_features < 1) {
    throw std::invalid_argument("generate_sbm: n, k and m must be positive");
  }

  const Index n = spec.num_nodes;
  const Index k = spec.num_classes;
  const Index m = spec.num_features;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  GraphBundle g;
  g.name = "sbm";
  g.num_nodes = n;
  g.num_features = m;
  g.num_classes = k;
  g.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) g.labels[i] = static_cast<int>(i % k);

  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double p = (g.labels[i] == g.labels[j]) ? spec.p_in : spec.p_out;
      if (uniform(rng) < p) {
        pairs.emplace_back(i, j);
        pairs.emplace_back(j, i);
      }
    }
  }
  g.adjacency = CsrPattern::from_pairs(n, n, std::move(pairs));

  std::vector<std::pair<Index, Index>> entries;
  for (Index i = 0; i < n; ++i) {
    for (Index d = 0; d < m; ++d) {
      bool bit = (d % k) == g.labels[i];
      if (uniform(rng) < spec.feature_flip) bit = !bit;
      if (bit) entries.emplace_back(i, d);
    }
  }
  g.features.pattern = CsrPattern::from_pairs(n, m, std::move(entries));
  g.features.values.assign(static_cast<std::size_t>(g.features.nnz()), 1.0);
  return g;
}

/// Draws a class-balanced training set of round(label_rate * n / k) nodes
/// per class, then validation and test sets from the remaining labeled
/// nodes. All lists are returned sorted.
inline GraphBundle make_split(GraphBundle bundle, const SplitSpec& spec) {
  const Index n = bundle.num_nodes;
  const Index k = bundle.num_classes;
  if (k < 1) throw GraphError("make_split: bundle has no classes");
  if (spec.label_rate <= 0.0 || spec.label_rate > 1.0) {
    throw GraphError("make_split: label rate must lie in (0, 1]");
  }
  const auto per_class = static_cast<Index>(
      std::llround(spec.label_rate * static_cast<double>(n) / static_cast<double>(k)));
  if (per_class < 1) {
    throw GraphError("make_split: label rate too low to give one node per class");
  }

  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(k));
  for (Index i = 0; i < n; ++i) {
    if (bundle.labels[i] != kUnlabeled) by_class[bundle.labels[i]].push_back(i);
  }

  std::mt19937_64 rng(spec.seed);
  Split split;
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (Index c = 0; c < k; ++c) {
    auto& candidates = by_class[c];
    if (static_cast<Index>(candidates.size()) < per_class) {
      throw GraphError("make_split: class " + std::to_string(c) + " has only " +
                       std::to_string(candidates.size()) + " labeled nodes, need " +
                       std::to_string(per_class));
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (Index j = 0; j < per_class; ++j) {
      split.train.push_back(candidates[j]);
      taken[candidates[j]] = 1;
    }
  }

  std::vector<Index> rest;
  for (Index i = 0; i < n; ++i) {
    if (!taken[i] && bundle.labels[i] != kUnlabeled) rest.push_back(i);
  }
  if (static_cast<Index>(rest.size()) < spec.val_size + spec.test_size) {
    throw GraphError("make_split: not enough labeled nodes for validation and test sets");
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  split.val.assign(rest.begin(), rest.begin() + spec.val_size);
  split.test.assign(rest.begin() + spec.val_size,
                    rest.begin() + spec.val_size + spec.test_size);

  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  bundle.split = std::move(split);
  return bundle;
}

}  // namespace sacn
