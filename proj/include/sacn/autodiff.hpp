#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every primitive application in creation order, which is a
// topological order of the computation graph. backward() walks the tape in
// reverse and each node pushes its gradient into its inputs, so gradients
// accumulate additively across fan-out. Scalars are 1x1 matrices.
//
// Sparse operands (CsrMatrix, CsrPattern) are captured by pointer and must
// outlive the tape's backward pass.

#include "sacn/sparse.hpp"

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sacn::ad {

/// Inputs to log are clamped from below at this value.
inline constexpr double kLogFloor = 1e-12;
/// Added to the column standard deviation in zscore_columns.
inline constexpr double kZscoreEpsilon = 1e-8;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<T>& value() const { return tape_->value(id_); }
  /// Gradient after backward(); zero matrix if nothing flowed here.
  const Matrix<T>& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  T scalar() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("scalar(): tensor is not 1x1");
    return value()(0, 0);
  }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  std::size_t id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var<T> variable(Matrix<T> value) { return push(std::move(value), true, {}); }
  /// Leaf without a gradient.
  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, {}); }
  Var<T> scalar_constant(T value) { return constant(Matrix<T>::Constant(1, 1, value)); }

  /// Records an operation. The backward callback is kept only when one of
  /// the parents needs a gradient.
  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owner(p);
      needs = needs || requires_grad(p.id());
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }
  Var<T> record(Matrix<T> value, std::span<const Var<T>> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owner(p);
      needs = needs || requires_grad(p.id());
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  void backward(Var<T> root) {
    check_owner(root);
    if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward: root must be 1x1");
    if (!requires_grad(root.id())) return;
    grad_mut(root.id()).setConstant(T(1));
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (node.backward && node.grad.size() != 0) node.backward(*this, id);
    }
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  const Matrix<T>& grad(std::size_t id) {
    return grad_mut(id);
  }

  /// grad[id] += g, skipped for nodes that need no gradient.
  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    if (!nodes_[id].requires_grad) return;
    grad_mut(id) += g;
  }

  /// Mutable gradient buffer; allocated as zeros on first access.
  Matrix<T>& grad_mut(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0 && node.value.size() != 0) {
      node.grad = Matrix<T>::Zero(node.value.rows(), node.value.cols());
    }
    return node.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push(Matrix<T> value, bool requires_grad, Backward backward) {
#ifndef NDEBUG
    if (!value.allFinite()) throw NonFiniteError("autodiff: non-finite value recorded");
#endif
    nodes_.push_back(Node{std::move(value), Matrix<T>(), requires_grad, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owner(const Var<T>& v) const {
    if (v.tape() != this) throw std::invalid_argument("autodiff: variable belongs to another tape");
  }

  std::deque<Node> nodes_;
};

namespace detail {

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

template <class T>
void require_column(const Var<T>& a, const char* op) {
  if (a.cols() != 1) throw ShapeError(std::string(op) + ": expected a column vector");
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_mut(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_mut(ib).noalias() += t.value(ia).transpose() * g;
  });
}

/// a * b for a constant dense `a` that is borrowed, not copied; `a` must
/// outlive the backward pass.
template <class T>
Var<T> matmul(const Matrix<T>& a, Var<T> b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a * b.value();
  const Matrix<T>* ap = &a;
  const auto ib = b.id();
  return b.tape()->record(std::move(out), {b}, [ap, ib](Tape<T>& t, std::size_t self) {
    t.grad_mut(ib).noalias() += ap->transpose() * t.grad(self);
  });
}

/// op * b for a constant linear operator exposing rows(), cols(),
/// project(B) = op * B and project_transpose(G) = op^T * G. `op` is
/// borrowed and must outlive the backward pass.
template <class T, class Op>
Var<T> linear_map(const Op& op, Var<T> b) {
  if (op.cols() != b.rows()) throw ShapeError("linear_map: inner dimensions differ");
  const Op* opp = &op;
  const auto ib = b.id();
  return b.tape()->record(op.project(b.value()), {b}, [opp, ib](Tape<T>& t, std::size_t self) {
    t.grad_mut(ib) += opp->project_transpose(t.grad(self));
  });
}

/// S * b for a constant weighted sparse S.
template <class T>
Var<T> sparse_dense_matmul(const CsrMatrix<T>& s, Var<T> b) {
  if (s.cols() != b.rows()) throw ShapeError("sparse_dense_matmul: shape mismatch");
  const CsrMatrix<T>* sp = &s;
  const auto ib = b.id();
  return b.tape()->record(multiply(s, b.value()), {b}, [sp, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& gb = t.grad_mut(ib);
    const auto& p = sp->pattern;
    for (Index r = 0; r < p.rows; ++r) {
      for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
        gb.row(p.col_idx[k]).noalias() += sp->values[k] * g.row(r);
      }
    }
  });
}

/// P * b for a constant binary pattern P.
template <class T>
Var<T> sparse_dense_matmul(const CsrPattern& p, Var<T> b) {
  if (p.cols != b.rows()) throw ShapeError("sparse_dense_matmul: shape mismatch");
  const CsrPattern* pp = &p;
  const auto ib = b.id();
  return b.tape()->record(multiply(p, b.value()), {b}, [pp, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& gb = t.grad_mut(ib);
    for (Index r = 0; r < pp->rows; ++r) {
      for (Index k = pp->row_ptr[r]; k < pp->row_ptr[r + 1]; ++k) {
        gb.row(pp->col_idx[k]).noalias() += g.row(r);
      }
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <class T>
Var<T> subtract(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "subtract");
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <class T>
Var<T> elementwise_multiply(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "elementwise_multiply");
  const auto ia = a.id(), ib = b.id();
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_mut(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_mut(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <class T>
Var<T> scalar_multiply(Var<T> a, T s) {
  const auto ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self) * s);
  });
}

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) { return subtract(a, b); }
template <class T>
Var<T> operator*(T s, Var<T> a) { return scalar_multiply(a, s); }

template <class T>
Var<T> exp(Var<T> a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().array().exp().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(self)));
  });
}

/// Natural log with inputs clamped at kLogFloor; no gradient below the floor.
template <class T>
Var<T> log(Var<T> a) {
  const auto ia = a.id();
  const T floor = static_cast<T>(kLogFloor);
  Matrix<T> out = a.value().array().max(floor).log().matrix();
  return a.tape()->record(std::move(out), {a}, [ia, floor](Tape<T>& t, std::size_t self) {
    const auto& x = t.value(ia).array();
    t.accumulate(ia, (x > floor).select(t.grad(self).array() / x, T(0)).matrix());
  });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope) {
  const auto ia = a.id();
  Matrix<T> out = (a.value().array() > T(0)).select(a.value().array(), slope * a.value().array()).matrix();
  return a.tape()->record(std::move(out), {a}, [ia, slope](Tape<T>& t, std::size_t self) {
    const auto& x = t.value(ia).array();
    const auto& g = t.grad(self).array();
    t.accumulate(ia, (x > T(0)).select(g, slope * g).matrix());
  });
}

template <class T>
Var<T> elu(Var<T> a) {
  const auto ia = a.id();
  const auto& x = a.value().array();
  Matrix<T> out = (x > T(0)).select(x, x.exp() - T(1)).matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& xv = t.value(ia).array();
    const auto& g = t.grad(self).array();
    t.accumulate(ia, (xv > T(0)).select(g, g * xv.exp()).matrix());
  });
}

/// Softmax over each row.
template <class T>
Var<T> row_softmax(Var<T> a) {
  const auto ia = a.id();
  Matrix<T> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const T mx = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const Matrix<T>& y = t.value(self);
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad_mut(ia);
    for (Index r = 0; r < y.rows(); ++r) {
      const T dot = y.row(r).dot(g.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

template <class T>
Var<T> concat_columns(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_columns: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_columns: row counts differ");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  Tape<T>* tape = parts.front().tape();
  return tape->record(std::move(out), parts, [layout](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    for (const auto& [id, off] : layout) {
      if (t.requires_grad(id)) t.grad_mut(id) += g.middleCols(off, t.value(id).cols());
    }
  });
}

template <class T>
Var<T> concat_columns(const std::vector<Var<T>>& parts) {
  return concat_columns(std::span<const Var<T>>(parts));
}

template <class T>
Var<T> column_block(Var<T> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("column_block: out of range");
  const auto ia = a.id();
  Matrix<T> out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), {a}, [ia, start, count](Tape<T>& t, std::size_t self) {
    t.grad_mut(ia).middleCols(start, count) += t.grad(self);
  });
}

template <class T>
Var<T> row_block(Var<T> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("row_block: out of range");
  const auto ia = a.id();
  Matrix<T> out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), {a}, [ia, start, count](Tape<T>& t, std::size_t self) {
    t.grad_mut(ia).middleRows(start, count) += t.grad(self);
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().transpose();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  const auto ia = a.id();
  return a.tape()->record(Matrix<T>::Constant(1, 1, a.value().sum()), {a},
                          [ia](Tape<T>& t, std::size_t self) {
                            Matrix<T>& ga = t.grad_mut(ia);
                            ga.array() += t.grad(self)(0, 0);
                          });
}

/// tr(a * b) without forming the product.
template <class T>
Var<T> trace_product(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows() || a.rows() != b.cols()) throw ShapeError("trace_product: shape mismatch");
  const auto ia = a.id(), ib = b.id();
  const T value = a.value().cwiseProduct(b.value().transpose()).sum();
  return a.tape()->record(Matrix<T>::Constant(1, 1, value), {a, b},
                          [ia, ib](Tape<T>& t, std::size_t self) {
                            const T g = t.grad(self)(0, 0);
                            if (t.requires_grad(ia)) t.grad_mut(ia) += g * t.value(ib).transpose();
                            if (t.requires_grad(ib)) t.grad_mut(ib) += g * t.value(ia).transpose();
                          });
}

/// Sum of squared entries.
template <class T>
Var<T> frobenius_sq(Var<T> a) {
  const auto ia = a.id();
  return a.tape()->record(Matrix<T>::Constant(1, 1, a.value().squaredNorm()), {a},
                          [ia](Tape<T>& t, std::size_t self) {
                            t.accumulate(ia, (T(2) * t.grad(self)(0, 0)) * t.value(ia));
                          });
}

/// Inverted dropout: zeroes entries with probability `rate` and scales the
/// survivors by 1 / (1 - rate). Identity when `training` is false.
template <class T, class Rng>
Var<T> dropout(Var<T> a, double rate, Rng& rng, bool training = true) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("dropout: rate outside [0, 1]");
  if (!training || rate == 0.0) return a;
  Matrix<T> mask(a.rows(), a.cols());
  if (rate == 1.0) {
    mask.setZero();
  } else {
    std::bernoulli_distribution keep(1.0 - rate);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : T(0);
  }
  const auto ia = a.id();
  Matrix<T> out = a.value().cwiseProduct(mask);
  return a.tape()->record(std::move(out), {a},
                          [ia, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
                            t.accumulate(ia, t.grad(self).cwiseProduct(mask));
                          });
}

/// Column-wise (x - mean) / (std + eps) with the population standard
/// deviation. The backward pass differentiates through mean and std.
template <class T>
Var<T> zscore_columns(Var<T> a, T eps = static_cast<T>(kZscoreEpsilon)) {
  const Index n = a.rows();
  if (n < 1) throw ShapeError("zscore_columns: empty input");
  const Matrix<T>& x = a.value();
  Eigen::Matrix<T, 1, Eigen::Dynamic> mean = x.colwise().mean();
  Matrix<T> centered = x.rowwise() - mean;
  Eigen::Matrix<T, 1, Eigen::Dynamic> sigma =
      (centered.array().square().colwise().sum() / static_cast<T>(n)).sqrt().matrix();
  Eigen::Matrix<T, 1, Eigen::Dynamic> denom = sigma.array() + eps;
  Matrix<T> out = centered.array().rowwise() / denom.array();

  const auto ia = a.id();
  return a.tape()->record(
      std::move(out), {a},
      [ia, n, centered = std::move(centered), sigma = std::move(sigma),
       denom = std::move(denom)](Tape<T>& t, std::size_t self) {
        const Matrix<T>& g = t.grad(self);
        Matrix<T> gc = g.array().rowwise() / denom.array();
        for (Index c = 0; c < g.cols(); ++c) {
          if (sigma(c) > T(0)) {
            const T gdotc = g.col(c).dot(centered.col(c));
            const T coeff = gdotc / (denom(c) * denom(c) * static_cast<T>(n) * sigma(c));
            gc.col(c) -= coeff * centered.col(c);
          }
        }
        Eigen::Matrix<T, 1, Eigen::Dynamic> gmean = gc.colwise().mean();
        t.grad_mut(ia) += gc.rowwise() - gmean;
      });
}

template <class T>
Var<T> gather_rows(Var<T> a, std::vector<Index> rows) {
  Matrix<T> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, rows = std::move(rows)](Tape<T>& t, std::size_t self) {
                            const Matrix<T>& g = t.grad(self);
                            Matrix<T>& ga = t.grad_mut(ia);
                            for (std::size_t i = 0; i < rows.size(); ++i) {
                              ga.row(rows[i]) += g.row(static_cast<Index>(i));
                            }
                          });
}

// Edge-level operations over a CSR pattern. Edge tensors are nnz x 1 in
// storage order of the pattern.

/// e_k = src[row(k)] + dst[col(k)].
template <class T>
Var<T> edge_sum(Var<T> src, Var<T> dst, const CsrPattern& p) {
  detail::require_column(src, "edge_sum");
  detail::require_column(dst, "edge_sum");
  if (src.rows() != p.rows || dst.rows() != p.cols) throw ShapeError("edge_sum: shape mismatch");
  Matrix<T> out(p.nnz(), 1);
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      out(k, 0) = src.value()(r, 0) + dst.value()(p.col_idx[k], 0);
    }
  }
  const CsrPattern* pp = &p;
  const auto is = src.id(), id = dst.id();
  return src.tape()->record(std::move(out), {src, dst}, [pp, is, id](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    const bool want_src = t.requires_grad(is), want_dst = t.requires_grad(id);
    for (Index r = 0; r < pp->rows; ++r) {
      for (Index k = pp->row_ptr[r]; k < pp->row_ptr[r + 1]; ++k) {
        if (want_src) t.grad_mut(is)(r, 0) += g(k, 0);
        if (want_dst) t.grad_mut(id)(pp->col_idx[k], 0) += g(k, 0);
      }
    }
  });
}

/// Softmax of edge scores within each row's neighborhood.
template <class T>
Var<T> edge_softmax(Var<T> e, const CsrPattern& p) {
  detail::require_column(e, "edge_softmax");
  if (e.rows() != p.nnz()) throw ShapeError("edge_softmax: shape mismatch");
  Matrix<T> out(p.nnz(), 1);
  const Matrix<T>& x = e.value();
  for (Index r = 0; r < p.rows; ++r) {
    const Index b = p.row_ptr[r], end = p.row_ptr[r + 1];
    if (b == end) continue;
    T mx = x(b, 0);
    for (Index k = b + 1; k < end; ++k) mx = std::max(mx, x(k, 0));
    T total = 0;
    for (Index k = b; k < end; ++k) {
      out(k, 0) = std::exp(x(k, 0) - mx);
      total += out(k, 0);
    }
    for (Index k = b; k < end; ++k) out(k, 0) /= total;
  }
  const CsrPattern* pp = &p;
  const auto ie = e.id();
  return e.tape()->record(std::move(out), {e}, [pp, ie](Tape<T>& t, std::size_t self) {
    const Matrix<T>& y = t.value(self);
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ge = t.grad_mut(ie);
    for (Index r = 0; r < pp->rows; ++r) {
      const Index b = pp->row_ptr[r], end = pp->row_ptr[r + 1];
      T dot = 0;
      for (Index k = b; k < end; ++k) dot += y(k, 0) * g(k, 0);
      for (Index k = b; k < end; ++k) ge(k, 0) += y(k, 0) * (g(k, 0) - dot);
    }
  });
}

/// out_r = sum over stored (r, c) of weight_k * h_c.
template <class T>
Var<T> edge_aggregate(Var<T> weights, const CsrPattern& p, Var<T> h) {
  detail::require_column(weights, "edge_aggregate");
  if (weights.rows() != p.nnz() || h.rows() != p.cols) throw ShapeError("edge_aggregate: shape mismatch");
  Matrix<T> out = Matrix<T>::Zero(p.rows, h.cols());
  const Matrix<T>& w = weights.value();
  const Matrix<T>& hv = h.value();
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      out.row(r).noalias() += w(k, 0) * hv.row(p.col_idx[k]);
    }
  }
  const CsrPattern* pp = &p;
  const auto iw = weights.id(), ih = h.id();
  return weights.tape()->record(std::move(out), {weights, h}, [pp, iw, ih](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    const bool want_w = t.requires_grad(iw), want_h = t.requires_grad(ih);
    const Matrix<T>& w = t.value(iw);
    const Matrix<T>& hv = t.value(ih);
    for (Index r = 0; r < pp->rows; ++r) {
      for (Index k = pp->row_ptr[r]; k < pp->row_ptr[r + 1]; ++k) {
        const Index c = pp->col_idx[k];
        if (want_w) t.grad_mut(iw)(k, 0) += g.row(r).dot(hv.row(c));
        if (want_h) t.grad_mut(ih).row(c).noalias() += w(k, 0) * g.row(r);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

class NonDeterministicLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
using LossFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

/// Compares tape gradients of `loss` against central differences
/// (f(x + eps) - f(x - eps)) / 2eps. Returns the worst relative error
/// |a - f| / max(|a|, |f|, 1e-8) over the checked coordinates, skipping
/// coordinates that agree to within the rounding noise of the difference.
///
/// When max_coordinates is nonzero, that many coordinates are sampled
/// (using `seed`) instead of checking all of them.
template <class T>
double gradient_check(const LossFn<T>& loss, const std::vector<Matrix<T>>& params, double eps,
                      std::uint64_t seed = 0, std::size_t max_coordinates = 0) {
  if (!(eps > 0.0)) throw std::invalid_argument("gradient_check: eps must be positive");

  auto evaluate = [&](const std::vector<Matrix<T>>& values) {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    vars.reserve(values.size());
    for (const auto& v : values) vars.push_back(tape.variable(v));
    return static_cast<double>(loss(tape, vars).scalar());
  };

  Tape<T> tape;
  std::vector<Var<T>> vars;
  for (const auto& p : params) vars.push_back(tape.variable(p));
  Var<T> root = loss(tape, vars);
  const double base = static_cast<double>(root.scalar());
  if (evaluate(params) != base) {
    throw NonDeterministicLoss("gradient_check: loss differs between identical evaluations");
  }
  tape.backward(root);

  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Index i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  }
  if (max_coordinates != 0 && coords.size() > max_coordinates) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coordinates);
  }

  double worst = 0.0;
  std::vector<Matrix<T>> work = params;
  for (const auto& [p, i] : coords) {
    const T original = work[p].data()[i];
    work[p].data()[i] = original + static_cast<T>(eps);
    const double plus = evaluate(work);
    work[p].data()[i] = original - static_cast<T>(eps);
    const double minus = evaluate(work);
    work[p].data()[i] = original;

    const double numeric = (plus - minus) / (2.0 * eps);
    const double analytic = static_cast<double>(vars[p].grad().data()[i]);
    // Differences below the rounding noise of the quotient itself are not
    // resolvable; they show up on coordinates whose exact gradient is zero
    // (e.g. a per-row shift ahead of a softmax). 64 ulps of |f| allows for
    // accumulation across the ops of a composite loss.
    const double noise = 64.0 * std::numeric_limits<T>::epsilon() *
                         std::max({std::abs(plus), std::abs(minus), 1.0}) / (2.0 * eps);
    const double diff = std::abs(analytic - numeric);
    if (diff <= noise) continue;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

}  // namespace sacn::ad
