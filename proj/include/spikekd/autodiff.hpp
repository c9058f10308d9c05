#pragma once

// Tape-based reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records every primitive in creation order, which is already a
// topological order. backward() walks the tape once in reverse from a scalar
// output and never mutates it, so several backward passes from different
// scalar outputs of one forward pass are independent of each other.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spikekd/tensor.hpp"

namespace spikekd::ad {

class Tape;
class GradSink;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Gradient map returned by Tape::backward. Nodes the output does not depend
/// on report an all-zero tensor of their own shape.
class Gradients {
 public:
  Gradients() = default;

  Tensor operator[](const Var& v) const;
  bool reached(const Var& v) const;

 private:
  friend class Tape;
  friend class GradSink;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

class GradSink {
 public:
  /// Gradient accumulator for node `id`, zero-initialized on first access.
  Tensor& at(std::size_t id);

 private:
  friend class Tape;
  explicit GradSink(Gradients& g) : g_(g) {}
  Gradients& g_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter or data).
  Var leaf(Tensor value);
  /// Alias of leaf(); used where the intent is "never updated".
  Var constant(Tensor value) { return leaf(std::move(value)); }

  Var record(Tensor value, std::string op, BackwardFn backward);

  /// d(output)/d(node) for every node. `output` must be a single-element node.
  Gradients backward(const Var& output) const;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    Tensor value;
    std::string op;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All inputs must live on the same tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// A (m x n) + b (n) broadcast over rows.
Var add_row(const Var& a, const Var& b);
Var relu(const Var& a);

/// Row-wise softmax(a / tau); rank-1 inputs are one row.
Var softmax(const Var& a, double tau = 1.0);
Var log_softmax(const Var& a, double tau = 1.0);

Var sum(const Var& a);
Var mean(const Var& a);
/// Rank-2 reduction. axis 0 -> length n, axis 1 -> length m.
Var sum_axis(const Var& a, std::size_t axis);
Var mean_axis(const Var& a, std::size_t axis);

Var l2_norm(const Var& a);
Var dot(const Var& a, const Var& b);

/// out[k] = a(rows[k], cols[k]).
Var gather(const Var& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);
/// Copy of `a` with a(rows[k], cols[k]) replaced by v[k]. Replaced entries pass
/// their gradient to v only. Index pairs must be distinct.
Var scatter(const Var& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols, const Var& v);

/// Elementwise min. On exact ties the gradient is split evenly.
Var minimum(const Var& a, const Var& b);

/// Identity in the forward pass; blocks all upstream gradient.
Var stop_gradient(const Var& a);

// ---------------------------------------------------------------------------
// Finite-difference checking.

/// Central differences of f around x, one coordinate at a time.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-12);

struct GradCheckResult {
  double max_rel_error = 0.0;
  Tensor analytic;
  Tensor numeric;
};

/// `f` builds a scalar on the given tape from the leaf it is handed.
GradCheckResult grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double step);

}  // namespace spikekd::ad
