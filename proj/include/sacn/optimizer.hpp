#pragma once

#include "sacn/sparse.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace sacn {

struct AdamOptions {
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
  long step = 0;

  static AdamState zeros_like(std::span<const Matrix<T>* const> params) {
    AdamState s;
    for (const auto* p : params) {
      s.first_moment.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
      s.second_moment.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

/// One adaptive-moment update with bias correction. Weight decay is
/// decoupled: parameters are first scaled by (1 - lr * weight_decay).
template <class T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>* const> grads,
               AdamState<T>& state, const AdamOptions& opt) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T decay = static_cast<T>(1.0 - opt.learning_rate * opt.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix<T>& p = *params[i];
    const Matrix<T>& g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw std::invalid_argument("adam_step: shape mismatch");
    Matrix<T>& m = state.first_moment[i];
    Matrix<T>& v = state.second_moment[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p *= decay;
    p.array() -= static_cast<T>(opt.learning_rate) * (m.array() / static_cast<T>(c1)) /
                 ((v.array() / static_cast<T>(c2)).sqrt() + static_cast<T>(opt.epsilon));
  }
}

}  // namespace sacn
