#pragma once

#include "mixpinn/common.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

/// Minimal reverse-mode automatic differentiation over dense 2-D matrices.
///
/// A Tape records every primitive evaluated during one forward pass; each
/// record keeps its value and a closure computing the vector-Jacobian product
/// for its inputs. Tapes are rebuilt per forward pass and are not thread-safe.
namespace mixpinn::ad {

using IndexList = std::shared_ptr<const std::vector<Index>>;

inline IndexList make_index_list(std::vector<Index> indices) {
  return std::make_shared<const std::vector<Index>>(std::move(indices));
}

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives the gradient flowing into a record's output and the output value.
  using Backward = std::function<void(Tape&, const Matrix& grad_out, const Matrix& out)>;

  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf whose gradient is collected by backward().
  Var parameter(Matrix value);

  /// Records a primitive output. `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  /// Seeds d(output)/d(output) = 1 and propagates in reverse record order.
  void backward(Var output);

  /// Adds `grad` into the gradient of `v` if it needs one.
  void accumulate(Var v, const Matrix& grad);
  void accumulate(Var v, Matrix&& grad);
  bool needs_grad(Var v) const { return records_[static_cast<std::size_t>(v.id())].needs_grad; }

  /// Gradient of a record after backward(); zeros when nothing flowed into it.
  Matrix grad(Var v) const;

  const Matrix& value(Var v) const { return records_[static_cast<std::size_t>(v.id())].value; }
  std::size_t size() const { return records_.size(); }

  /// Debug aid: throw NumericalError if a new value is not finite.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Record {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad, Backward backward);

  std::deque<Record> records_;
  bool record_gradients_;
  bool check_finite_ = false;
};

// Primitives. Shape mismatches throw UsageError naming the primitive and shapes.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (r x c) plus a broadcast row vector (1 x c).
Var add_row(Var a, Var row);
Var multiply(Var a, Var b);
/// a (r x c) times a broadcast column vector (r x 1).
Var multiply_col(Var a, Var col);
Var scale(Var a, double factor);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, IndexList rows);
Var scatter_add_rows(Var a, IndexList rows, Index out_rows);
/// Softmax of each column over groups of rows sharing a segment id, stabilized
/// by subtracting the per-segment maximum.
Var segment_softmax(Var logits, IndexList segments, Index segment_count);
/// out[dst[e]] += weight[e] * a[src[e]]; fuses gather, row scaling and scatter-add.
Var weighted_gather_scatter(Var a, Var weights, IndexList sources, IndexList destinations, Index out_rows);
Var leaky_relu(Var a, double negative_slope);
Var exp(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
/// Euclidean norm of each row (r x 1). The gradient at a zero row is taken as zero.
Var l2_rows(Var a);

// Finite-difference verification.

struct GradCheckBlock {
  std::string name;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_relative_error = 0.0;
  bool pass = false;
};

using ScalarFunction = std::function<Var(Tape&, std::span<const Var> parameters)>;

/// Compares backward() against central differences for every entry of every
/// parameter block. A block's error is max|analytic - numeric| divided by the
/// largest gradient magnitude in that block.
GradCheckReport grad_check(const ScalarFunction& function, std::span<const Matrix> parameters,
                           std::span<const std::string> names, double tolerance, double step = 1e-6);

/// Keeps large tape buffers on the heap instead of fresh mmaps so repeated
/// steps reuse pages. No-op outside glibc; safe to call more than once.
void tune_allocator();

}  // namespace mixpinn::ad
