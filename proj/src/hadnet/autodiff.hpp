#pragma once

// Minimal tape-based reverse-mode differentiation over rank-2 double tensors.
//
// A Tape records every operation in execution order; backward() walks the
// recording in exact reverse order and accumulates gradients additively, so
// a tensor used twice receives the sum of both contributions. Leaves created
// with requires_grad=false (constants) never get closures recorded, which
// makes value-only evaluation cheap.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "hadnet/matrix.hpp"

namespace hadnet::ad {

class Tape;

class Tensor {
 public:
  Tensor() = default;

  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward =
      std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad = true);
  Tensor constant(Matrix value) { return leaf(std::move(value), false); }

  /// Appends a computed node. The closure is stored only when a parent
  /// requires a gradient.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, Backward backward);
  Tensor record(Matrix value, std::span<const Tensor> parents, Backward backward);

  const Matrix& value(const Tensor& t) const { return nodes_.at(t.id()).value; }
  bool requires_grad(const Tensor& t) const { return nodes_.at(t.id()).requires_grad; }

  /// Gradient accumulator for t, zero-initialised on first access.
  Matrix& grad(const Tensor& t);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws NonScalarLoss.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// Generic primitives. Shapes are checked and mismatches throw ShapeMismatch.

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);  // x W + b (b is 1 x out)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);  // max(a, 0), subgradient 0 at the kink
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_row(const Tensor& a, std::size_t row);
Tensor assign_row(const Tensor& a, std::size_t row, const Tensor& replacement);
Tensor slice_cols(const Tensor& a, std::size_t first, std::size_t count);
Tensor assign_cols(const Tensor& a, std::size_t first, const Tensor& replacement);
Tensor repeat_rows(const Tensor& row, std::size_t count);
Tensor row_sum(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor sum_sq(const Tensor& a);
/// Elementwise (lo - a)^2 below lo, (a - hi)^2 above hi, zero inside.
Tensor relu_hinge(const Tensor& a, double lo, double hi);

struct BatchNormState {
  Matrix running_mean;  // 1 x C
  Matrix running_var;   // 1 x C
};

struct BatchNormOptions {
  bool training = true;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-column normalisation across rows (the batch), then gamma * xhat + beta.
/// Training mode uses batch statistics and updates `state` when given;
/// evaluation mode uses the running statistics. Throws BatchTooSmall when
/// training with fewer than two rows.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState* state, const BatchNormOptions& options = {});

// Finite-difference verification.

using MultiInputFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;
using SingleInputFn = std::function<Tensor(Tape&, const Tensor&)>;

enum class DifferenceScheme {
  Central,     // (f(x + e) - f(x - e)) / 2e
  Richardson,  // (4 D(e) - D(2e)) / 3, fourth order; for strongly curved losses
};

/// Max over all input coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const MultiInputFn& f, const std::vector<Matrix>& inputs, double eps = 1e-5,
                  DifferenceScheme scheme = DifferenceScheme::Central);
double grad_check(const SingleInputFn& f, const Matrix& x, double eps = 1e-5,
                  DifferenceScheme scheme = DifferenceScheme::Central);

}  // namespace hadnet::ad
