#include "mixpinn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mixpinn::ad {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

[[noreturn]] void shape_error(const char* primitive, const Matrix& a, const Matrix& b) {
  throw UsageError(std::string(primitive) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

void check_same_tape(Var a, Var b, const char* primitive) {
  if (a.tape() != b.tape() || a.tape() == nullptr)
    throw UsageError(std::string(primitive) + ": operands on different tapes");
}

void check_indices(const std::vector<Index>& idx, Index bound, const char* primitive) {
  for (Index i : idx)
    if (i < 0 || i >= bound)
      throw UsageError(std::string(primitive) + ": index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(bound) + ")");
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw UsageError("scalar: value has shape " + shape(v));
  return v(0, 0);
}

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
  if (check_finite_ && !value.allFinite())
    throw NumericalError("autodiff: non-finite value produced at record " + std::to_string(records_.size()));
  Record& r = records_.emplace_back();
  r.value = std::move(value);
  r.needs_grad = needs_grad && record_gradients_;
  if (r.needs_grad) r.backward = std::move(backward);
  return Var(this, static_cast<int>(records_.size() - 1));
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, {}); }

Var Tape::parameter(Matrix value) { return push(std::move(value), true, {}); }

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (Var v : inputs) {
    if (v.tape() != this) throw UsageError("autodiff: input recorded on a different tape");
    needs = needs || records_[static_cast<std::size_t>(v.id())].needs_grad;
  }
  return push(std::move(value), needs, std::move(backward));
}

void Tape::accumulate(Var v, const Matrix& grad) {
  Record& r = records_[static_cast<std::size_t>(v.id())];
  if (!r.needs_grad) return;
  if (r.grad.size() == 0)
    r.grad = grad;
  else
    r.grad += grad;
}

void Tape::accumulate(Var v, Matrix&& grad) {
  Record& r = records_[static_cast<std::size_t>(v.id())];
  if (!r.needs_grad) return;
  if (r.grad.size() == 0)
    r.grad = std::move(grad);
  else
    r.grad += grad;
}

Matrix Tape::grad(Var v) const {
  const Record& r = records_[static_cast<std::size_t>(v.id())];
  if (r.grad.size() == 0) return Matrix::Zero(r.value.rows(), r.value.cols());
  return r.grad;
}

void Tape::backward(Var output) {
  if (output.tape() != this) throw UsageError("backward: output recorded on a different tape");
  const Record& out = records_[static_cast<std::size_t>(output.id())];
  if (out.value.size() != 1) throw UsageError("backward: output must be scalar, got " + shape(out.value));
  if (!record_gradients_) throw UsageError("backward: tape was created without gradient recording");
  for (Record& r : records_) r.grad.resize(0, 0);
  accumulate(output, Matrix::Ones(1, 1));
  for (int id = output.id(); id >= 0; --id) {
    Record& r = records_[static_cast<std::size_t>(id)];
    if (!r.backward || r.grad.size() == 0) continue;
    r.backward(*this, r.grad, r.value);
    // Interior gradients are not needed once propagated; parameters keep theirs.
    r.grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out = av * bv;
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -g);
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.value(), row.value());
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var multiply(Var a, Var b) {
  check_same_tape(a, b, "multiply");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("multiply", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var multiply_col(Var a, Var col) {
  check_same_tape(a, col, "multiply_col");
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("multiply_col", a.value(), col.value());
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape()->record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.accumulate(a, g.array().colwise() * col.value().col(0).array());
    if (t.needs_grad(col)) t.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  return a.tape()->record(std::move(out), {a},
                          [a, factor](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * factor); });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (Var p : parts) {
    check_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (Var p : parts) {
    const Matrix& pv = p.value();
    const Index pc = pv.cols();
    for (Index r = 0; r < rows; ++r) std::copy_n(pv.data() + r * pc, pc, out.data() + r * cols + offset);
    offset += pc;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape()->record(std::move(out), parts, [inputs](Tape& t, const Matrix& g, const Matrix&) {
    const Index rows = g.rows(), cols = g.cols();
    Index off = 0;
    for (Var p : inputs) {
      const Index pc = p.cols();
      if (t.needs_grad(p)) {
        Matrix gp(rows, pc);
        for (Index r = 0; r < rows; ++r) std::copy_n(g.data() + r * cols + off, pc, gp.data() + r * pc);
        t.accumulate(p, std::move(gp));
      }
      off += pc;
    }
  });
}

Var gather_rows(Var a, IndexList rows) {
  check_indices(*rows, a.rows(), "gather_rows");
  const Matrix& av = a.value();
  const Index c = av.cols();
  Matrix out(static_cast<Index>(rows->size()), c);
  for (std::size_t r = 0; r < rows->size(); ++r)
    std::copy_n(av.data() + (*rows)[r] * c, c, out.data() + static_cast<Index>(r) * c);
  return a.tape()->record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g, const Matrix&) {
    const Index c = g.cols();
    Matrix ga = Matrix::Zero(a.rows(), c);
    for (std::size_t r = 0; r < rows->size(); ++r) {
      double* dst = ga.data() + (*rows)[r] * c;
      const double* src = g.data() + static_cast<Index>(r) * c;
      for (Index k = 0; k < c; ++k) dst[k] += src[k];
    }
    t.accumulate(a, std::move(ga));
  });
}

Var scatter_add_rows(Var a, IndexList rows, Index out_rows) {
  if (static_cast<Index>(rows->size()) != a.rows())
    throw UsageError("scatter_add_rows: " + std::to_string(rows->size()) + " indices for " + shape(a.value()));
  check_indices(*rows, out_rows, "scatter_add_rows");
  const Matrix& av = a.value();
  const Index c = av.cols();
  Matrix out = Matrix::Zero(out_rows, c);
  for (std::size_t r = 0; r < rows->size(); ++r) {
    double* dst = out.data() + (*rows)[r] * c;
    const double* src = av.data() + static_cast<Index>(r) * c;
    for (Index k = 0; k < c; ++k) dst[k] += src[k];
  }
  return a.tape()->record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g, const Matrix&) {
    const Index c = g.cols();
    Matrix ga(a.rows(), c);
    for (std::size_t r = 0; r < rows->size(); ++r)
      std::copy_n(g.data() + (*rows)[r] * c, c, ga.data() + static_cast<Index>(r) * c);
    t.accumulate(a, std::move(ga));
  });
}

Var segment_softmax(Var logits, IndexList segments, Index segment_count) {
  const Matrix& x = logits.value();
  if (static_cast<Index>(segments->size()) != x.rows())
    throw UsageError("segment_softmax: " + std::to_string(segments->size()) + " segment ids for " + shape(x));
  check_indices(*segments, segment_count, "segment_softmax");
  const Index m = x.rows(), c = x.cols();
  const Index* seg = segments->data();
  Matrix peak = Matrix::Constant(segment_count, c, -std::numeric_limits<double>::infinity());
  for (Index r = 0; r < m; ++r) {
    double* p = peak.data() + seg[r] * c;
    const double* xr = x.data() + r * c;
    for (Index k = 0; k < c; ++k) p[k] = std::max(p[k], xr[k]);
  }
  Matrix out(m, c);
  Matrix total = Matrix::Zero(segment_count, c);
  for (Index r = 0; r < m; ++r) {
    const double* p = peak.data() + seg[r] * c;
    const double* xr = x.data() + r * c;
    double* o = out.data() + r * c;
    double* tot = total.data() + seg[r] * c;
    for (Index k = 0; k < c; ++k) {
      o[k] = std::exp(xr[k] - p[k]);
      tot[k] += o[k];
    }
  }
  for (Index r = 0; r < m; ++r) {
    const double* tot = total.data() + seg[r] * c;
    double* o = out.data() + r * c;
    for (Index k = 0; k < c; ++k) o[k] /= tot[k];
  }
  return logits.tape()->record(std::move(out), {logits},
                               [logits, segments, segment_count](Tape& t, const Matrix& g, const Matrix& y) {
                                 const Index m = y.rows(), c = y.cols();
                                 const Index* seg = segments->data();
                                 Matrix weighted = Matrix::Zero(segment_count, c);
                                 for (Index r = 0; r < m; ++r) {
                                   double* w = weighted.data() + seg[r] * c;
                                   for (Index k = 0; k < c; ++k) w[k] += y(r, k) * g(r, k);
                                 }
                                 Matrix gx(m, c);
                                 for (Index r = 0; r < m; ++r) {
                                   const double* w = weighted.data() + seg[r] * c;
                                   for (Index k = 0; k < c; ++k) gx(r, k) = y(r, k) * (g(r, k) - w[k]);
                                 }
                                 t.accumulate(logits, std::move(gx));
                               });
}

Var weighted_gather_scatter(Var a, Var weights, IndexList sources, IndexList destinations, Index out_rows) {
  check_same_tape(a, weights, "weighted_gather_scatter");
  const Matrix& av = a.value();
  const Matrix& w = weights.value();
  if (w.cols() != 1 || static_cast<std::size_t>(w.rows()) != sources->size() || sources->size() != destinations->size())
    throw UsageError("weighted_gather_scatter: weights " + shape(w) + " do not match " + std::to_string(sources->size()) +
                     " sources and " + std::to_string(destinations->size()) + " destinations");
  check_indices(*sources, av.rows(), "weighted_gather_scatter");
  check_indices(*destinations, out_rows, "weighted_gather_scatter");
  Matrix out = Matrix::Zero(out_rows, av.cols());
  const Index* src = sources->data();
  const Index* dst = destinations->data();
  const Index edges = static_cast<Index>(sources->size());
  for (Index e = 0; e < edges; ++e) out.row(dst[e]).noalias() += w(e, 0) * av.row(src[e]);
  return a.tape()->record(std::move(out), {a, weights},
                          [a, weights, sources, destinations](Tape& t, const Matrix& g, const Matrix&) {
                            const Index* src = sources->data();
                            const Index* dst = destinations->data();
                            const Index edges = static_cast<Index>(sources->size());
                            const Matrix& av = a.value();
                            const Matrix& w = weights.value();
                            if (t.needs_grad(a)) {
                              Matrix ga = Matrix::Zero(av.rows(), av.cols());
                              for (Index e = 0; e < edges; ++e) ga.row(src[e]).noalias() += w(e, 0) * g.row(dst[e]);
                              t.accumulate(a, std::move(ga));
                            }
                            if (t.needs_grad(weights)) {
                              Matrix gw(w.rows(), 1);
                              for (Index e = 0; e < edges; ++e) gw(e, 0) = av.row(src[e]).dot(g.row(dst[e]));
                              t.accumulate(weights, std::move(gw));
                            }
                          });
}

Var leaky_relu(Var a, double negative_slope) {
  const Matrix& av = a.value();
  Matrix out = (av.array() * (negative_slope + (1.0 - negative_slope) * (av.array() >= 0.0).cast<double>())).matrix();
  return a.tape()->record(std::move(out), {a}, [a, negative_slope](Tape& t, const Matrix& g, const Matrix&) {
    const auto positive = (a.value().array() >= 0.0).cast<double>();
    Matrix ga = (g.array() * (negative_slope + (1.0 - negative_slope) * positive)).matrix();
    t.accumulate(a, std::move(ga));
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, g.cwiseProduct(y));
  });
}

Var sqrt(Var a) {
  Matrix out = a.value().array().sqrt().matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, (0.5 * g.array() / y.array()).matrix());
  });
}

Var square(Var a) {
  Matrix out = a.value().array().square().matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw UsageError("mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / count;
  return a.tape()->record(std::move(out), {a}, [a, count](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / count));
  });
}

Var l2_rows(Var a) {
  Matrix out = a.value().rowwise().norm();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    const Matrix& av = a.value();
    Matrix ga(av.rows(), av.cols());
    for (Index r = 0; r < av.rows(); ++r) {
      const double n = y(r, 0);
      if (n > 0.0)
        ga.row(r) = av.row(r) * (g(r, 0) / n);
      else
        ga.row(r).setZero();
    }
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const ScalarFunction& function, std::span<const Matrix> parameters,
                           std::span<const std::string> names, double tolerance, double step) {
  auto evaluate = [&](std::span<const Matrix> values) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const Matrix& m : values) vars.push_back(tape.constant(m));
    return function(tape, vars).scalar();
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& m : parameters) vars.push_back(tape.parameter(m));
  Var out = function(tape, vars);
  tape.backward(out);

  GradCheckReport report;
  std::vector<Matrix> work(parameters.begin(), parameters.end());
  for (std::size_t b = 0; b < parameters.size(); ++b) {
    const Matrix analytic = tape.grad(vars[b]);
    Matrix numeric(analytic.rows(), analytic.cols());
    for (Index i = 0; i < work[b].size(); ++i) {
      double& x = work[b].data()[i];
      const double saved = x;
      const double h = step * std::max(1.0, std::abs(saved));
      x = saved + h;
      const double plus = evaluate(work);
      x = saved - h;
      const double minus = evaluate(work);
      x = saved;
      numeric.data()[i] = (plus - minus) / (2.0 * h);
    }
    const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-300});
    const double err = analytic.size() == 0 ? 0.0 : (analytic - numeric).cwiseAbs().maxCoeff() / scale;
    report.blocks.push_back({b < names.size() ? names[b] : "param" + std::to_string(b), err});
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  report.pass = report.max_relative_error <= tolerance;
  return report;
}

void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
  });
#endif
}

}  // namespace mixpinn::ad
