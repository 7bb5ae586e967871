#pragma once

#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "hbm/autodiff/parameter.hpp"
#include "hbm/core/coord.hpp"
#include "hbm/core/types.hpp"

namespace hbm::ad {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Receives the output gradient; pushes contributions into parents through the tape.
using BackwardFn = std::function<void(Tape&, const Matrix&)>;

/// Dynamic reverse-mode tape. One tape per forward pass.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix v) { return push(std::move(v), false, nullptr, nullptr); }

  /// Differentiable input without an owning Parameter (grad readable via grad()).
  Var leaf(Matrix v) { return push(std::move(v), grad_enabled_, nullptr, nullptr); }

  /// One node per parameter per tape; gradients flow into Parameter::grad on backward().
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, grad_enabled_, nullptr, &p);
    param_nodes_[&p] = v.id();
    return v;
  }

  /// Records an op result. Backward is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool rg = false;
    if (grad_enabled_)
      for (const Var& v : inputs) rg = rg || (v.valid() && nodes_[v.id()].requires_grad);
    return push(std::move(value), rg, rg ? std::move(fn) : BackwardFn{}, nullptr);
  }
  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool rg = false;
    if (grad_enabled_)
      for (const Var& v : inputs) rg = rg || (v.valid() && nodes_[v.id()].requires_grad);
    return push(std::move(value), rg, rg ? std::move(fn) : BackwardFn{}, nullptr);
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  Matrix& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(const Var& v, const Matrix& g) {
    if (!v.valid() || !nodes_[v.id()].requires_grad) return;
    grad_buffer(v.id()) += g;
  }

  const Matrix& grad(const Var& v) { return grad_buffer(v.id()); }

  /// Runs reverse accumulation from a scalar and adds parameter gradients into
  /// their Parameter::grad.
  void backward(const Var& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: variable from another tape");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id()).setConstant(1.0);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols())
          n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  /// Folds a token describing a discrete decision (ReLU sign pattern, neighbour
  /// selection, clamp) into a running signature. Gradient probes compare
  /// signatures to detect steps that crossed a kink.
  void mark(uint64_t token) { signature_ = mix64(signature_ ^ (token + 0x9e3779b97f4a7c15ULL)); }
  uint64_t signature() const { return signature_; }

  size_t size() const { return nodes_.size(); }
  bool touched(const Parameter& p) const { return param_nodes_.count(&p) > 0; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool rg, BackwardFn fn, Parameter* p) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(fn);
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_;
  uint64_t signature_ = 0x12345678ULL;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

}  // namespace hbm::ad
