#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbm/autodiff/tape.hpp"

namespace hbm::ad {

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
}
inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty variable");
  return *a.tape();
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = detail::tape_of(a);
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.grad_buffer(a.id()).noalias() += g * b.value().transpose();
    if (b.requires_grad()) t.grad_buffer(b.id()).noalias() += a.value().transpose() * g;
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tape& t = detail::tape_of(a);
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tape& t = detail::tape_of(a);
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (b.requires_grad()) t.grad_buffer(b.id()) -= g;
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tape& t = detail::tape_of(a);
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.grad_buffer(a.id()) += g.cwiseProduct(b.value());
    if (b.requires_grad()) t.grad_buffer(b.id()) += g.cwiseProduct(a.value());
  });
}

inline Var scale(const Var& a, double s) {
  Tape& t = detail::tape_of(a);
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.grad_buffer(a.id()) += g * s;
  });
}

/// Adds a 1xC row to every row of x.
inline Var add_bias(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw std::invalid_argument("add_bias: bias shape");
  Tape& t = detail::tape_of(x);
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {x, bias}, [x, bias](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (bias.requires_grad()) t.grad_buffer(bias.id()) += g.colwise().sum();
  });
}

inline Var relu(const Var& x) {
  Tape& t = detail::tape_of(x);
  Matrix out = x.value().cwiseMax(0.0);
  uint64_t h = 0;
  const double* d = x.value().data();
  for (Eigen::Index i = 0; i < x.value().size(); ++i)
    if (d[i] > 0.0) h = mix64(h ^ (static_cast<uint64_t>(i) + 0x9e3779b97f4a7c15ULL));
  t.mark(h);
  return t.record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    if (!x.requires_grad()) return;
    Matrix& gx = t.grad_buffer(x.id());
    const Matrix& xv = x.value();
    for (Eigen::Index i = 0; i < xv.size(); ++i)
      if (xv.data()[i] > 0.0) gx.data()[i] += g.data()[i];
  });
}

inline Var sigmoid(const Var& x) {
  Tape& t = detail::tape_of(x);
  auto logistic = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  Matrix out = x.value().unaryExpr(logistic);
  return t.record(std::move(out), {x}, [x, logistic](Tape& t, const Matrix& g) {
    if (!x.requires_grad()) return;
    const Matrix s = x.value().unaryExpr(logistic);
    t.grad_buffer(x.id()) += g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  });
}

inline Var tanh(const Var& x) {
  Tape& t = detail::tape_of(x);
  Matrix out = x.value().array().tanh().matrix();
  return t.record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    if (!x.requires_grad()) return;
    Matrix th = x.value().array().tanh().matrix();
    t.grad_buffer(x.id()) += g.cwiseProduct((1.0 - th.array().square()).matrix());
  });
}

inline Var log(const Var& x) {
  Tape& t = detail::tape_of(x);
  Matrix out = x.value().array().log().matrix();
  return t.record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    if (x.requires_grad()) t.grad_buffer(x.id()) += g.cwiseQuotient(x.value());
  });
}

inline Var sum(const Var& x) {
  Tape& t = detail::tape_of(x);
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    if (x.requires_grad()) t.grad_buffer(x.id()).array() += g(0, 0);
  });
}

inline Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty variable");
  return scale(sum(x), 1.0 / n);
}

/// Sum over entries of the natural-log binary cross entropy between
/// sigmoid(logits) and 0/1 labels: softplus(l) - y l, evaluated stably.
inline Var bce_with_logits(const Var& logits, const Matrix& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  Tape& t = detail::tape_of(logits);
  const Matrix& l = logits.value();
  double total = 0.0;
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    const double v = l.data()[i];
    total += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - labels.data()[i] * v;
  }
  return t.record(Matrix::Constant(1, 1, total), {logits}, [logits, labels](Tape& t, const Matrix& g) {
    if (!logits.requires_grad()) return;
    Matrix& gl = t.grad_buffer(logits.id());
    const Matrix& l = logits.value();
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      const double v = l.data()[i];
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gl.data()[i] += g(0, 0) * (s - labels.data()[i]);
    }
  });
}

/// Sum of scalars.
inline Var add_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_scalars: empty");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

inline Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape& t = detail::tape_of(xs[0]);
  const Eigen::Index rows = xs[0].rows();
  Eigen::Index cols = 0;
  for (const Var& v : xs) {
    if (v.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += v.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& v : xs) {
    out.middleCols(c, v.cols()) = v.value();
    c += v.cols();
  }
  return t.record(std::move(out), xs, [xs](Tape& t, const Matrix& g) {
    Eigen::Index c = 0;
    for (const Var& v : xs) {
      if (v.requires_grad()) t.grad_buffer(v.id()) += g.middleCols(c, v.cols());
      c += v.cols();
    }
  });
}

inline Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > x.cols()) throw std::invalid_argument("slice_cols: out of range");
  Tape& t = detail::tape_of(x);
  Matrix out = x.value().middleCols(start, n);
  return t.record(std::move(out), {x}, [x, start, n](Tape& t, const Matrix& g) {
    if (x.requires_grad()) t.grad_buffer(x.id()).middleCols(start, n) += g;
  });
}

/// out[i] = x[idx[i]], or zeros where idx[i] < 0.
inline Var gather_rows(const Var& x, std::vector<int32_t> idx) {
  Tape& t = detail::tape_of(x);
  const Matrix& xv = x.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (size_t i = 0; i < idx.size(); ++i)
    if (idx[i] >= 0) out.row(i) = xv.row(idx[i]);
  return t.record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, const Matrix& g) {
    if (!x.requires_grad()) return;
    Matrix& gx = t.grad_buffer(x.id());
    for (size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0) gx.row(idx[i]) += g.row(i);
  });
}

/// Softmax within consecutive segments of a column vector; segment q spans
/// rows [offsets[q], offsets[q+1]).
inline Var segment_softmax(const Var& scores, std::vector<int32_t> offsets) {
  if (scores.cols() != 1) throw std::invalid_argument("segment_softmax: expects a column");
  Tape& t = detail::tape_of(scores);
  const Matrix& s = scores.value();
  Matrix w(s.rows(), 1);
  for (size_t q = 0; q + 1 < offsets.size(); ++q) {
    const int32_t b = offsets[q], e = offsets[q + 1];
    if (b == e) continue;
    double mx = s(b, 0);
    for (int32_t j = b + 1; j < e; ++j) mx = std::max(mx, s(j, 0));
    double z = 0.0;
    for (int32_t j = b; j < e; ++j) z += (w(j, 0) = std::exp(s(j, 0) - mx));
    for (int32_t j = b; j < e; ++j) w(j, 0) /= z;
  }
  Matrix wcopy = w;
  return t.record(std::move(w), {scores},
                  [scores, offsets = std::move(offsets), w = std::move(wcopy)](Tape& t, const Matrix& g) {
                    if (!scores.requires_grad()) return;
                    Matrix& gs = t.grad_buffer(scores.id());
                    for (size_t q = 0; q + 1 < offsets.size(); ++q) {
                      double dot = 0.0;
                      for (int32_t j = offsets[q]; j < offsets[q + 1]; ++j) dot += w(j, 0) * g(j, 0);
                      for (int32_t j = offsets[q]; j < offsets[q + 1]; ++j) gs(j, 0) += w(j, 0) * (g(j, 0) - dot);
                    }
                  });
}

/// out[q] = sum over rows j in segment q of weights[j] * values[j]; empty segments give zero rows.
inline Var segment_weighted_sum(const Var& weights, const Var& values, std::vector<int32_t> offsets) {
  if (weights.cols() != 1 || weights.rows() != values.rows())
    throw std::invalid_argument("segment_weighted_sum: shape mismatch");
  Tape& t = detail::tape_of(values);
  const Eigen::Index q_count = static_cast<Eigen::Index>(offsets.size()) - 1;
  Matrix out = Matrix::Zero(q_count, values.cols());
  const Matrix& w = weights.value();
  const Matrix& v = values.value();
  for (Eigen::Index q = 0; q < q_count; ++q)
    for (int32_t j = offsets[q]; j < offsets[q + 1]; ++j) out.row(q) += w(j, 0) * v.row(j);
  return t.record(std::move(out), {weights, values},
                  [weights, values, offsets = std::move(offsets)](Tape& t, const Matrix& g) {
                    const Matrix& w = weights.value();
                    const Matrix& v = values.value();
                    const bool gw = weights.requires_grad(), gv = values.requires_grad();
                    Matrix* dw = gw ? &t.grad_buffer(weights.id()) : nullptr;
                    Matrix* dv = gv ? &t.grad_buffer(values.id()) : nullptr;
                    for (size_t q = 0; q + 1 < offsets.size(); ++q)
                      for (int32_t j = offsets[q]; j < offsets[q + 1]; ++j) {
                        if (gw) (*dw)(j, 0) += g.row(q).dot(v.row(j));
                        if (gv) dv->row(j) += w(j, 0) * g.row(q);
                      }
                  });
}

}  // namespace hbm::ad
