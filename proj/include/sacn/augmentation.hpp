#pragma once

#include "sacn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sacn {

/// Feature dimensions zeroed for one strong view.
struct MaskPlan {
  std::vector<Index> masked_dims;  // sorted
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Draws round(rate * m) distinct feature dimensions. The plan's seed is
/// drawn from `rng`, so a plan can be replayed from (m, rate, seed).
template <class Rng>
MaskPlan draw_mask_plan(Index num_features, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("feature_mask: rate outside [0, 1]");
  MaskPlan plan;
  plan.rate = rate;
  plan.seed = rng();
  const auto count = static_cast<Index>(std::llround(rate * static_cast<double>(num_features)));
  std::mt19937_64 local(plan.seed);
  std::vector<Index> dims(static_cast<std::size_t>(num_features));
  std::iota(dims.begin(), dims.end(), Index{0});
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, num_features - 1);
    std::swap(dims[i], dims[pick(local)]);
  }
  plan.masked_dims.assign(dims.begin(), dims.begin() + count);
  std::sort(plan.masked_dims.begin(), plan.masked_dims.end());
  return plan;
}

template <class T>
Matrix<T> apply_mask(Matrix<T> features, const MaskPlan& plan) {
  for (Index d : plan.masked_dims) features.col(d).setZero();
  return features;
}

template <class T>
SmoothedFeatures<T> apply_mask(const SmoothedFeatures<T>& features, const MaskPlan& plan) {
  return features.masked(plan.masked_dims);
}

/// Column-wise feature masking: the selected dimensions are zeroed for
/// every node; graph structure is untouched.
template <class T, class Rng>
std::pair<Matrix<T>, MaskPlan> feature_mask(const Matrix<T>& features, double rate, Rng& rng) {
  MaskPlan plan = draw_mask_plan(features.cols(), rate, rng);
  Matrix<T> masked = apply_mask(features, plan);
  return {std::move(masked), std::move(plan)};
}

}  // namespace sacn
