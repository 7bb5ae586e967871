#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "hbm/autodiff/tape.hpp"

namespace hbm::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t checked = 0;
  /// Components whose +/- probes changed a discrete decision (kink crossing).
  size_t skipped = 0;
};

/// Scalar function of differentiable inputs; parameters are read through Tape::param.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients with central differences:
///   max |analytic - fd| / max(|analytic|, |fd|, floor)
/// over the components of `inputs` and `params`. `floor` keeps structurally
/// zero components (where fd is pure roundoff) from dominating. When
/// `max_components` is nonzero a deterministic random subset of that size is
/// probed.
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Matrix> inputs,
                                  std::vector<Parameter*> params = {}, double eps = 1e-5,
                                  size_t max_components = 0, uint64_t seed = 1, double floor = 1e-8) {
  std::vector<Matrix> analytic_in;
  std::vector<Matrix> analytic_p;
  uint64_t base_sig = 0;
  {
    for (Parameter* p : params) p->zero_grad();
    Tape tape(true);
    std::vector<Var> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m));
    Var out = f(tape, leaves);
    tape.backward(out);
    base_sig = tape.signature();
    for (const Var& v : leaves) analytic_in.push_back(tape.grad(v));
    for (Parameter* p : params) analytic_p.push_back(p->grad);
  }

  auto evaluate = [&](uint64_t& sig) {
    Tape tape(false);
    std::vector<Var> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m));
    const double v = f(tape, leaves).value()(0, 0);
    sig = tape.signature();
    return v;
  };

  struct Slot {
    Matrix* value;
    const Matrix* grad;
    Eigen::Index index;
  };
  std::vector<Slot> slots;
  for (size_t i = 0; i < inputs.size(); ++i)
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) slots.push_back({&inputs[i], &analytic_in[i], k});
  for (size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params[i]->value.size(); ++k)
      slots.push_back({&params[i]->value, &analytic_p[i], k});

  if (max_components != 0 && slots.size() > max_components) {
    Rng rng(seed);
    for (size_t i = 0; i < max_components; ++i) std::swap(slots[i], slots[i + rng.below(slots.size() - i)]);
    slots.resize(max_components);
  }

  GradCheckResult res;
  for (const Slot& s : slots) {
    double& x = s.value->data()[s.index];
    const double orig = x;
    uint64_t sp = 0, sm = 0;
    x = orig + eps;
    const double fp = evaluate(sp);
    x = orig - eps;
    const double fm = evaluate(sm);
    x = orig;
    if (sp != base_sig || sm != base_sig) {
      ++res.skipped;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double a = s.grad->data()[s.index];
    const double denom = std::max({std::abs(a), std::abs(fd), floor});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(a - fd) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace hbm::ad
