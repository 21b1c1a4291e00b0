#pragma once

#include "sacn/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sacn {

/// Hard pseudolabels for a subset of unlabeled nodes.
struct PseudoLabelSet {
  std::vector<Index> indices;
  std::vector<int> classes;           // argmax class of each selected node
  std::vector<double> confidences;    // its max probability
  std::vector<Index> per_class_counts;

  Index selected_count() const { return static_cast<Index>(indices.size()); }
  bool empty() const { return indices.empty(); }

  /// One-hot target rows, u x k.
  template <class T>
  Matrix<T> targets(Index num_classes) const {
    Matrix<T> t = Matrix<T>::Zero(selected_count(), num_classes);
    for (std::size_t i = 0; i < classes.size(); ++i) t(static_cast<Index>(i), classes[i]) = T(1);
    return t;
  }

  double mean_confidence() const {
    if (confidences.empty()) return 0.0;
    double total = 0.0;
    for (double c : confidences) total += c;
    return total / static_cast<double>(confidences.size());
  }
};

/// Growth schedule for the per-class pseudolabel quota.
struct QuotaSchedule {
  double initial_fraction = 0.05;
  double growth_per_round = 0.05;
  double cap_fraction = 0.5;
  int round_length = 50;

  void validate() const {
    if (!(0.0 <= initial_fraction && initial_fraction <= cap_fraction && cap_fraction <= 1.0)) {
      throw std::invalid_argument("QuotaSchedule: need 0 <= initial <= cap <= 1");
    }
    if (growth_per_round < 0.0) throw std::invalid_argument("QuotaSchedule: negative growth");
    if (round_length < 1) throw std::invalid_argument("QuotaSchedule: round_length must be >= 1");
  }
};

/// Index of the largest entry; the lowest index wins ties.
template <class Row>
int argmax(const Row& row) {
  int best = 0;
  for (Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<int>(j);
  }
  return best;
}

/// Number of the given nodes whose argmax is each class.
template <class T>
std::vector<Index> argmax_counts(const Matrix<T>& y, std::span<const Index> nodes) {
  std::vector<Index> counts(static_cast<std::size_t>(y.cols()), 0);
  for (Index i : nodes) ++counts[argmax(y.row(i))];
  return counts;
}

inline double quota_fraction(const QuotaSchedule& s, int epoch, int start_epoch) {
  if (epoch < start_epoch) throw std::invalid_argument("quota_at: epoch precedes stage two");
  const int rounds = (epoch - start_epoch) / s.round_length;
  return std::min(s.cap_fraction, s.initial_fraction + s.growth_per_round * rounds);
}

/// quota_j = round(fraction(epoch) * available_j).
inline std::vector<Index> quota_at(const QuotaSchedule& s, int epoch, int start_epoch,
                                   std::span<const Index> per_class_available) {
  const double fraction = quota_fraction(s, epoch, start_epoch);
  std::vector<Index> quota;
  quota.reserve(per_class_available.size());
  for (Index available : per_class_available) {
    quota.push_back(static_cast<Index>(std::llround(fraction * static_cast<double>(available))));
  }
  return quota;
}

/// Class-aware selection: nodes are grouped by their argmax class and each
/// group is ranked by confidence independently; the top quota_j of group j
/// are kept. Equal confidences go to the lower node index.
template <class T>
PseudoLabelSet select_class_aware(const Matrix<T>& y_weak, std::span<const Index> unlabeled,
                                  std::span<const Index> quota_per_class) {
  const Index k = y_weak.cols();
  if (static_cast<Index>(quota_per_class.size()) != k) {
    throw std::invalid_argument("select_class_aware: quota size differs from class count");
  }
  std::vector<std::vector<std::pair<double, Index>>> groups(static_cast<std::size_t>(k));
  for (Index i : unlabeled) {
    const int c = argmax(y_weak.row(i));
    groups[c].emplace_back(static_cast<double>(y_weak(i, c)), i);
  }

  PseudoLabelSet out;
  out.per_class_counts.assign(static_cast<std::size_t>(k), 0);
  for (Index c = 0; c < k; ++c) {
    auto& g = groups[c];
    std::sort(g.begin(), g.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const Index take = std::min<Index>(std::max<Index>(quota_per_class[c], 0),
                                       static_cast<Index>(g.size()));
    for (Index r = 0; r < take; ++r) {
      out.indices.push_back(g[r].second);
      out.classes.push_back(static_cast<int>(c));
      out.confidences.push_back(g[r].first);
    }
    out.per_class_counts[c] = take;
  }
  return out;
}

}  // namespace sacn
