#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hbm/autodiff/parameter.hpp"

namespace hbm::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are created lazily to match parameter shapes.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Throws naming the parameter if any gradient entry is NaN.
  void step(ParameterStore& params, double lr) {
    for (size_t i = 0; i < params.size(); ++i) {
      const Parameter& p = params[i];
      if (p.grad.hasNaN()) throw std::runtime_error("NaN gradient in parameter " + p.name);
    }
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
        v_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
      const auto mhat = m_[i].array() / bc1;
      const auto vhat = v_[i].array() / bc2;
      p.value.array() -= lr * mhat / (vhat.sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Step decay: base * decay^floor(epoch / period); defaults decay by 0.7
/// every 15 epochs.
inline double lr_schedule(int epoch, double base_lr, double decay = 0.7, int period = 15) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  return base_lr * std::pow(decay, static_cast<double>(epoch / period));
}

}  // namespace hbm::ad
