#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hbm/autodiff/ops.hpp"
#include "hbm/entropy/range_coder.hpp"

namespace hbm::entropy {

/// Round half away from zero.
inline double round_half_away(double x) { return std::round(x); }

inline Matrix quantize_infer(const Matrix& x) { return x.unaryExpr([](double v) { return std::round(v); }); }

/// x + u with u ~ U(-0.5, 0.5) drawn from `rng`; the noise is a constant on
/// the tape so the gradient is the identity.
inline ad::Var quantize_train(const ad::Var& x, Rng& rng) {
  Matrix u = rng.uniform_matrix(x.rows(), x.cols(), -0.5, 0.5);
  return ad::add(x, x.tape()->constant(std::move(u)));
}

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Parameter layout of one channel (43 values):
///   H0 3x1 | H1 3x3 | H2 3x3 | H3 1x3 | b0 3 | b1 3 | b2 3 | b3 1 | a0 3 | a1 3 | a2 3
inline constexpr int kDims[5] = {1, 3, 3, 3, 1};
inline constexpr int kHOff[4] = {0, 3, 12, 21};
inline constexpr int kBOff[4] = {24, 27, 30, 33};
inline constexpr int kAOff[3] = {34, 37, 40};
inline constexpr int kParamsPerChannel = 43;

/// Channel parameters with the reparameterisations applied once.
struct ChannelView {
  const double* raw;
  std::array<double, 24> h;   // softplus(H)
  std::array<double, 9> ta;   // tanh(a)

  explicit ChannelView(const double* p) : raw(p) {
    for (int i = 0; i < 24; ++i) h[i] = softplus(p[i]);
    for (int i = 0; i < 9; ++i) ta[i] = std::tanh(p[34 + i]);
  }
};

/// Intermediates of one scalar evaluation, kept for the backward pass.
struct Trace {
  std::array<std::array<double, 3>, 5> v{};  // layer inputs (v[0] = x) and final output v[4][0]
  std::array<std::array<double, 3>, 4> z{};  // pre-gate activations
};

/// Logit of the CDF at x.
inline double forward(const ChannelView& c, double x, Trace* tr = nullptr) {
  std::array<double, 3> v{x, 0, 0};
  Trace local;
  Trace& t = tr ? *tr : local;
  t.v[0] = v;
  for (int k = 0; k < 4; ++k) {
    const int din = kDims[k], dout = kDims[k + 1];
    std::array<double, 3> z{};
    for (int i = 0; i < dout; ++i) {
      double s = c.raw[kBOff[k] + i];
      for (int j = 0; j < din; ++j) s += c.h[kHOff[k] + i * din + j] * v[j];
      z[i] = s;
    }
    t.z[k] = z;
    if (k < 3)
      for (int i = 0; i < dout; ++i) z[i] += c.ta[kAOff[k] - 34 + i] * std::tanh(z[i]);
    v = z;
    t.v[k + 1] = v;
  }
  return v[0];
}

/// Accumulates g * d logit / d(params) into dp and returns g * d logit / dx.
inline double backward(const ChannelView& c, const Trace& t, double g, double* dp) {
  std::array<double, 3> gv{g, 0, 0};
  for (int k = 3; k >= 0; --k) {
    const int din = kDims[k], dout = kDims[k + 1];
    std::array<double, 3> gz{};
    for (int i = 0; i < dout; ++i) {
      if (k < 3) {
        const double th = std::tanh(t.z[k][i]);
        const double ta = c.ta[kAOff[k] - 34 + i];
        gz[i] = gv[i] * (1.0 + ta * (1.0 - th * th));
        if (dp) dp[kAOff[k] + i] += gv[i] * th * (1.0 - ta * ta);
      } else {
        gz[i] = gv[i];
      }
      if (dp) dp[kBOff[k] + i] += gz[i];
    }
    std::array<double, 3> gin{};
    for (int i = 0; i < dout; ++i)
      for (int j = 0; j < din; ++j) {
        const int idx = kHOff[k] + i * din + j;
        if (dp) dp[idx] += gz[i] * t.v[k][j] * sigmoid(c.raw[idx]);
        gin[j] += c.h[idx] * gz[i];
      }
    gv = gin;
  }
  return gv[0];
}

}  // namespace detail

/// Smallest probability used in rate estimates.
inline constexpr double kMinLikelihood = 0x1.0p-64;

/// -sum log2(max(p, 2^-64)) over all entries; `clamped` counts floored entries.
inline double bits_from_likelihoods(const Matrix& p, size_t* clamped = nullptr) {
  double bits = 0.0;
  size_t n = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p.data()[i];
    if (v < kMinLikelihood) ++n;
    bits -= std::log2(std::max(v, kMinLikelihood));
  }
  if (clamped) *clamped = n;
  return bits;
}

/// Fully factorized density: one monotone scalar CDF per channel built from a
/// 1-3-3-3-1 stack of softplus-positive matrices with tanh gates, followed by
/// a sigmoid. Parameters live in one C x 43 matrix.
class FactorizedModel {
 public:
  FactorizedModel() = default;
  FactorizedModel(ad::ParameterStore& store, const std::string& name, int channels, double init_scale = 1.0)
      : channels_(channels) {
    param_ = &store.create(name + ".psi", {static_cast<uint32_t>(channels), detail::kParamsPerChannel}, channels,
                           detail::kParamsPerChannel);
    const double scale = std::pow(init_scale, 1.0 / 5.0);
    for (int c = 0; c < channels; ++c)
      for (int k = 0; k < 4; ++k) {
        const double init = std::log(std::expm1(1.0 / scale / detail::kDims[k + 1]));
        for (int i = 0; i < detail::kDims[k + 1] * detail::kDims[k]; ++i)
          param_->value(c, detail::kHOff[k] + i) = init;
      }
  }

  int channels() const { return channels_; }
  ad::Parameter* parameter() const { return param_; }

  /// CDF of channel c at x.
  double cdf(int c, double x) const { return detail::sigmoid(logit(c, x)); }

  double logit(int c, double x) const {
    detail::ChannelView v(param_->value.row(c).data());
    return detail::forward(v, x);
  }

  /// P(round(x) = n) for integer n, evaluated in the numerically stable tail:
  /// |sigmoid(s u) - sigmoid(s l)| with s = -sign(l + u).
  double pmf(int c, double n) const {
    detail::ChannelView v(param_->value.row(c).data());
    return pmf_view(v, n);
  }

  /// Quantised table for channel c over [lo, hi]; escape mass is the tail outside.
  CdfTable table(int c, int32_t lo, int32_t hi) const {
    detail::ChannelView v(param_->value.row(c).data());
    std::vector<double> p;
    p.reserve(static_cast<size_t>(hi - lo) + 2);
    double inside = 0.0;
    for (int32_t n = lo; n <= hi; ++n) {
      p.push_back(pmf_view(v, n));
      inside += p.back();
    }
    p.push_back(std::max(0.0, 1.0 - inside));
    return quantize_pmf(lo, p);
  }

  /// Per-element CDF values (differentiable in x and psi).
  ad::Var cdf(ad::Tape& t, const ad::Var& x) const {
    check(x);
    ad::Var psi = t.param(*param_);
    const Matrix& xv = x.value();
    Matrix out(xv.rows(), xv.cols());
    for (int c = 0; c < channels_; ++c) {
      detail::ChannelView v(param_->value.row(c).data());
      for (Eigen::Index r = 0; r < xv.rows(); ++r) out(r, c) = detail::sigmoid(detail::forward(v, xv(r, c)));
    }
    return t.record(std::move(out), {x, psi}, [param = param_, channels = channels_, x, psi](ad::Tape& t, const Matrix& g) {
      const Matrix& xv = x.value();
      Matrix* dx = x.requires_grad() ? &t.grad_buffer(x.id()) : nullptr;
      Matrix* dp = psi.requires_grad() ? &t.grad_buffer(psi.id()) : nullptr;
      for (int c = 0; c < channels; ++c) {
        detail::ChannelView v(param->value.row(c).data());
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
          detail::Trace tr;
          const double s = detail::sigmoid(detail::forward(v, xv(r, c), &tr));
          const double gl = g(r, c) * s * (1.0 - s);
          const double gx = detail::backward(v, tr, gl, dp ? dp->row(c).data() : nullptr);
          if (dx) (*dx)(r, c) += gx;
        }
      }
    });
  }

  /// Rate in bits, -sum log2(max(pmf(y), 2^-64)), differentiable in y and psi.
  /// `clamped` receives the number of elements whose pmf hit the floor.
  ad::Var bits(ad::Tape& t, const ad::Var& y, size_t* clamped = nullptr) const {
    check(y);
    ad::Var psi = t.param(*param_);
    const Matrix& yv = y.value();
    double total = 0.0;
    size_t nclamp = 0;
    for (int c = 0; c < channels_; ++c) {
      detail::ChannelView v(param_->value.row(c).data());
      for (Eigen::Index r = 0; r < yv.rows(); ++r) {
        const double p = pmf_view(v, yv(r, c));
        if (p < kMinLikelihood) ++nclamp;
        total -= std::log2(std::max(p, kMinLikelihood));
      }
    }
    if (clamped) *clamped = nclamp;
    t.mark(nclamp);
    return t.record(Matrix::Constant(1, 1, total), {y, psi}, [param = param_, channels = channels_, y, psi](ad::Tape& t, const Matrix& g) {
      const Matrix& yv = y.value();
      Matrix* dy = y.requires_grad() ? &t.grad_buffer(y.id()) : nullptr;
      Matrix* dp = psi.requires_grad() ? &t.grad_buffer(psi.id()) : nullptr;
      const double scale = -g(0, 0) / std::log(2.0);
      for (int c = 0; c < channels; ++c) {
        detail::ChannelView v(param->value.row(c).data());
        double* dpc = dp ? dp->row(c).data() : nullptr;
        for (Eigen::Index r = 0; r < yv.rows(); ++r) {
          detail::Trace tu, tl;
          const double lu = detail::forward(v, yv(r, c) + 0.5, &tu);
          const double ll = detail::forward(v, yv(r, c) - 0.5, &tl);
          const double sgn = (lu + ll) > 0 ? -1.0 : 1.0;
          const double su = detail::sigmoid(sgn * lu), sl = detail::sigmoid(sgn * ll);
          const double p = std::abs(su - sl);
          if (p < kMinLikelihood) continue;  // clamped: zero gradient
          // d|su - sl| = sign(su - sl) * sgn * (su' dlu - sl' dll)
          const double dir = (su >= sl ? 1.0 : -1.0) * sgn;
          const double gu = scale / p * dir * su * (1.0 - su);
          const double gl = -scale / p * dir * sl * (1.0 - sl);
          double gx = detail::backward(v, tu, gu, dpc);
          gx += detail::backward(v, tl, gl, dpc);
          if (dy) (*dy)(r, c) += gx;
        }
      }
    });
  }

 private:
  void check(const ad::Var& x) const {
    if (x.cols() != channels_)
      throw std::invalid_argument("FactorizedModel: expected " + std::to_string(channels_) + " channels, got " +
                                  std::to_string(x.cols()));
  }

  static double pmf_view(const detail::ChannelView& v, double n) {
    const double lu = detail::forward(v, n + 0.5);
    const double ll = detail::forward(v, n - 0.5);
    const double sgn = (lu + ll) > 0 ? -1.0 : 1.0;
    return std::abs(detail::sigmoid(sgn * lu) - detail::sigmoid(sgn * ll));
  }

  int channels_ = 0;
  ad::Parameter* param_ = nullptr;
};

}  // namespace hbm::entropy
