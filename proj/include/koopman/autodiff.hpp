#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every intermediate matrix together with a closure that
// pushes the upstream gradient into its parents. Nodes only carry gradients
// when some leaf below them was created with Tape::variable(), so data and
// frozen parameters cost nothing on the backward pass.
//
// Batches follow the column-per-sample convention: an MLP layer computes
// W * X + b with X of shape (features x batch).

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "koopman/error.hpp"
#include "koopman/matfun.hpp"

namespace koopman::ad {

using SparseMatrix = Eigen::SparseMatrix<double>;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var variable(Matrix value) { return push(std::move(value), true, {}); }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var& v) const { return needs_grad(v.id()); }
  std::size_t size() const { return nodes_.size(); }

  /// Records an op result. `needs_grad` should be the OR over its parents.
  Var push(Matrix value, bool needs_grad, BackwardFn backward) {
    if (!value.allFinite()) fail(ErrorKind::NonFinite, "non-finite intermediate on the tape");
    nodes_.push_back(Node{std::move(value), needs_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  void accumulate(std::size_t id, const Matrix& g) {
    if (!nodes_[id].needs_grad) return;
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    Matrix& slot = grads_[id];
    if (slot.size() == 0) {
      slot = g;
    } else {
      slot += g;
    }
  }

  /// Reverse sweep from a 1x1 root. Gradients of earlier sweeps are cleared.
  void backward(const Var& root) {
    if (root.tape() != this) fail(ErrorKind::InvalidArgument, "backward: root belongs to another tape");
    if (root.rows() != 1 || root.cols() != 1) {
      fail(ErrorKind::ShapeMismatch, "backward: loss must be a 1x1 scalar");
    }
    grads_.assign(nodes_.size(), Matrix());
    if (!nodes_[root.id()].needs_grad) return;
    grads_[root.id()] = Matrix::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.backward || grads_[i].size() == 0) continue;
      node.backward(grads_[i]);
    }
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (grads_[i].size() != 0 && !grads_[i].allFinite()) {
        fail(ErrorKind::NonFinite, "backward: non-finite gradient");
      }
    }
  }

  /// Gradient of the last backward() root with respect to `v`; zeros when
  /// `v` does not influence the root.
  Matrix grad(const Var& v) const {
    if (v.id() < grads_.size() && grads_[v.id()].size() != 0) return grads_[v.id()];
    return Matrix::Zero(v.rows(), v.cols());
  }

 private:
  struct Node {
    Matrix value;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    fail(ErrorKind::InvalidArgument, "operands recorded on different tapes");
  }
  return *a.tape();
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                       std::to_string(b.cols()));
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    fail(ErrorKind::ShapeMismatch, "matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                       std::to_string(b.rows()));
  }
  const bool ga = tape.needs_grad(a);
  const bool gb = tape.needs_grad(b);
  Matrix out = a.value() * b.value();
  return tape.push(std::move(out), ga || gb, [&tape, a, b, ga, gb](const Matrix& g) {
    if (ga) tape.accumulate(a.id(), g * b.value().transpose());
    if (gb) tape.accumulate(b.id(), a.value().transpose() * g);
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  return tape.push(a.value() + b.value(), tape.needs_grad(a) || tape.needs_grad(b),
                   [&tape, a, b](const Matrix& g) {
                     tape.accumulate(a.id(), g);
                     tape.accumulate(b.id(), g);
                   });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  return tape.push(a.value() - b.value(), tape.needs_grad(a) || tape.needs_grad(b),
                   [&tape, a, b](const Matrix& g) {
                     tape.accumulate(a.id(), g);
                     if (tape.needs_grad(b)) tape.accumulate(b.id(), -g);
                   });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }

/// a (n x m) plus the column vector b (n x 1) added to every column.
inline Var add_bias(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  if (b.cols() != 1 || b.rows() != a.rows()) fail(ErrorKind::ShapeMismatch, "add_bias: bias shape");
  Matrix out = a.value().colwise() + b.value().col(0);
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [&tape, a, b](const Matrix& g) {
    tape.accumulate(a.id(), g);
    if (tape.needs_grad(b)) tape.accumulate(b.id(), g.rowwise().sum());
  });
}

inline Var scale(const Var& a, double s) {
  Tape& tape = *a.tape();
  return tape.push(s * a.value(), tape.needs_grad(a),
                   [&tape, a, s](const Matrix& g) { tape.accumulate(a.id(), s * g); });
}

/// Elementwise product with a constant matrix (masks, per-entry weights).
inline Var hadamard_const(const Var& a, const Matrix& m) {
  Tape& tape = *a.tape();
  if (m.rows() != a.rows() || m.cols() != a.cols()) fail(ErrorKind::ShapeMismatch, "hadamard_const");
  return tape.push(a.value().cwiseProduct(m), tape.needs_grad(a),
                   [&tape, a, m](const Matrix& g) { tape.accumulate(a.id(), g.cwiseProduct(m)); });
}

/// x * sigmoid(x)
inline Var silu(const Var& a) {
  Tape& tape = *a.tape();
  Matrix out = a.value().unaryExpr([](double x) { return x * detail::sigmoid(x); });
  return tape.push(std::move(out), tape.needs_grad(a), [&tape, a](const Matrix& g) {
    const Matrix d = a.value().unaryExpr([](double x) {
      const double s = detail::sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    });
    tape.accumulate(a.id(), g.cwiseProduct(d));
  });
}

inline Var tanh(const Var& a) {
  Tape& tape = *a.tape();
  Matrix out = a.value().array().tanh().matrix();
  return tape.push(out, tape.needs_grad(a), [&tape, a, out](const Matrix& g) {
    tape.accumulate(a.id(), g.cwiseProduct((1.0 - out.array().square()).matrix()));
  });
}

/// Sum of squared entries as a 1x1 node.
inline Var sum_squares(const Var& a) {
  Tape& tape = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return tape.push(std::move(out), tape.needs_grad(a),
                   [&tape, a](const Matrix& g) { tape.accumulate(a.id(), (2.0 * g(0, 0)) * a.value()); });
}

inline Var sum(const Var& a) {
  Tape& tape = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape.push(std::move(out), tape.needs_grad(a), [&tape, a](const Matrix& g) {
    tape.accumulate(a.id(), Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var transpose(const Var& a) {
  Tape& tape = *a.tape();
  return tape.push(a.value().transpose(), tape.needs_grad(a),
                   [&tape, a](const Matrix& g) { tape.accumulate(a.id(), g.transpose()); });
}

/// Columns [start, start + count).
inline Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& tape = *a.tape();
  if (start < 0 || count < 0 || start + count > a.cols()) fail(ErrorKind::ShapeMismatch, "cols: out of range");
  return tape.push(a.value().middleCols(start, count), tape.needs_grad(a),
                   [&tape, a, start, count](const Matrix& g) {
                     Matrix full = Matrix::Zero(a.rows(), a.cols());
                     full.middleCols(start, count) = g;
                     tape.accumulate(a.id(), full);
                   });
}

/// Rows [start, start + count).
inline Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& tape = *a.tape();
  if (start < 0 || count < 0 || start + count > a.rows()) fail(ErrorKind::ShapeMismatch, "rows: out of range");
  return tape.push(a.value().middleRows(start, count), tape.needs_grad(a),
                   [&tape, a, start, count](const Matrix& g) {
                     Matrix full = Matrix::Zero(a.rows(), a.cols());
                     full.middleRows(start, count) = g;
                     tape.accumulate(a.id(), full);
                   });
}

/// Horizontal concatenation of equally tall blocks.
inline Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::ShapeMismatch, "hconcat: no parts");
  Tape& tape = *parts.front().tape();
  const Eigen::Index height = parts.front().rows();
  Eigen::Index width = 0;
  bool needs = false;
  for (const Var& p : parts) {
    if (p.tape() != &tape) fail(ErrorKind::InvalidArgument, "hconcat: mixed tapes");
    if (p.rows() != height) fail(ErrorKind::ShapeMismatch, "hconcat: row mismatch");
    width += p.cols();
    needs = needs || tape.needs_grad(p);
  }
  Matrix out(height, width);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape.push(std::move(out), needs, [&tape, saved = std::move(saved)](const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      if (tape.needs_grad(p)) tape.accumulate(p.id(), g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

/// a * s for a constant sparse operator s (finite-difference stencils).
inline Var matmul_sparse(const Var& a, const SparseMatrix& s) {
  Tape& tape = *a.tape();
  if (a.cols() != s.rows()) fail(ErrorKind::ShapeMismatch, "matmul_sparse: inner dimensions");
  Matrix out = a.value() * s;
  return tape.push(std::move(out), tape.needs_grad(a), [&tape, a, s](const Matrix& g) {
    tape.accumulate(a.id(), Matrix(g * s.transpose()));
  });
}

/// exp(A) as a 30-term Taylor series after scaling A by 2^-s so that
/// ||A 2^-s||_1 <= 1/2, followed by s squarings. Built from recorded
/// primitives, so reverse mode differentiates it mechanically. The scaling
/// exponent depends on the value only and is treated as constant.
inline Var expm_series(const Var& a, int terms = 30) {
  Tape& tape = *a.tape();
  if (a.rows() != a.cols()) fail(ErrorKind::ShapeMismatch, "expm_series: square matrix required");
  const double norm1 = a.value().cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  const Var scaled = scale(a, std::ldexp(1.0, -squarings));
  const Eigen::Index n = a.rows();
  Var total = tape.constant(Matrix::Identity(n, n));
  Var term = total;
  for (int k = 1; k <= terms; ++k) {
    term = scale(matmul(term, scaled), 1.0 / k);
    total = add(total, term);
  }
  for (int i = 0; i < squarings; ++i) total = matmul(total, total);
  return total;
}

}  // namespace koopman::ad
