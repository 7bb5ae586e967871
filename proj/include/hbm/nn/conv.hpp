#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "hbm/autodiff/ops.hpp"
#include "hbm/nn/kernel_map.hpp"
#include "hbm/sparse_tensor.hpp"

namespace hbm::nn {

/// Differentiable counterpart of SparseTensor.
struct SparseVar {
  CoordSetPtr coords;
  ad::Var feats;

  size_t size() const { return coords->size(); }
  int32_t stride() const { return coords->stride(); }
  Eigen::Index channels() const { return feats.cols(); }
  SparseTensor value() const { return SparseTensor(coords, feats.value()); }
};

inline SparseVar constant(ad::Tape& t, const SparseTensor& x) { return {x.coords_ptr(), t.constant(x.features())}; }

/// Caches kernel maps for one forward pass; keeps the keyed coordinate sets alive.
class KernelMapCache {
 public:
  KernelMapPtr get(const CoordSetPtr& in, const CoordSetPtr& out, int kernel, bool transpose) {
    const Key key{in.get(), out.get(), kernel, transpose};
    auto it = maps_.find(key);
    if (it != maps_.end()) return it->second.map;
    Entry e{in, out, transpose ? transpose_kernel_map(*in, *out, kernel) : conv_kernel_map(*in, *out, kernel)};
    auto m = e.map;
    maps_.emplace(key, std::move(e));
    return m;
  }

 private:
  using Key = std::tuple<const CoordSet*, const CoordSet*, int, bool>;
  struct Entry {
    CoordSetPtr in, out;
    KernelMapPtr map;
  };
  std::map<Key, Entry> maps_;
};

/// Per-forward-pass state shared by all blocks.
struct Ctx {
  ad::Tape& tape;
  KernelMapCache maps;
  explicit Ctx(ad::Tape& t) : tape(t) {}
};

namespace detail {

// Row-major rows are contiguous, so rows move as plain spans.
inline void gather_rows(const Matrix& src, const std::vector<int32_t>& rows, Matrix& dst) {
  const Eigen::Index c = src.cols();
  dst.resize(static_cast<Eigen::Index>(rows.size()), c);
  double* d = dst.data();
  for (const int32_t r : rows) d = std::copy_n(src.data() + r * c, c, d);
}

inline void scatter_add_rows(const Matrix& src, const std::vector<int32_t>& rows, Matrix& dst) {
  const Eigen::Index c = src.cols();
  const double* s = src.data();
  for (const int32_t r : rows) {
    double* d = dst.data() + r * c;
    for (Eigen::Index j = 0; j < c; ++j) d[j] += s[j];
    s += c;
  }
}

// Below this many weights per offset, per-pair accumulation beats gather + GEMM + scatter.
inline constexpr Eigen::Index kDirectConvMax = 256;

template <Eigen::Index Cols>
void accumulate_pairs_fixed(const Matrix& src, const double* w, Eigen::Index cols, const std::vector<int32_t>& s,
                            const std::vector<int32_t>& d, Matrix& dst) {
  const Eigen::Index rows = src.cols();
  const Eigen::Index nc = Cols > 0 ? Cols : cols;
  for (size_t j = 0; j < s.size(); ++j) {
    const double* a = src.data() + s[j] * rows;
    double* o = dst.data() + d[j] * nc;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double ar = a[r];
      const double* wr = w + r * nc;
      for (Eigen::Index c = 0; c < nc; ++c) o[c] += ar * wr[c];
    }
  }
}

/// dst.row(d[j]) += src.row(s[j]) * W for every pair j; W is row-major cols(src) x cols.
inline void accumulate_pairs(const Matrix& src, const double* w, Eigen::Index cols, const std::vector<int32_t>& s,
                             const std::vector<int32_t>& d, Matrix& dst) {
  switch (cols) {
    case 1: return accumulate_pairs_fixed<1>(src, w, cols, s, d, dst);
    case 2: return accumulate_pairs_fixed<2>(src, w, cols, s, d, dst);
    case 4: return accumulate_pairs_fixed<4>(src, w, cols, s, d, dst);
    case 8: return accumulate_pairs_fixed<8>(src, w, cols, s, d, dst);
    case 16: return accumulate_pairs_fixed<16>(src, w, cols, s, d, dst);
    default: return accumulate_pairs_fixed<0>(src, w, cols, s, d, dst);
  }
}

}  // namespace detail

/// out = sum_k gather(in, in_rows[k]) * W_k scattered to out_rows[k], plus bias.
/// `weight` is (volume * Cin) x Cout with block k at rows [k*Cin, (k+1)*Cin).
inline ad::Var apply_kernel_map(const ad::Var& in, const ad::Var& weight, const ad::Var& bias,
                                KernelMapPtr map) {
  const Eigen::Index cin = in.cols();
  const Eigen::Index cout = weight.cols();
  if (weight.rows() != map->volume * cin)
    throw std::invalid_argument("sparse conv: weight rows " + std::to_string(weight.rows()) + " != " +
                                std::to_string(map->volume) + " x " + std::to_string(cin));
  if (static_cast<size_t>(in.rows()) != map->in_count) throw std::invalid_argument("sparse conv: input rows");
  ad::Tape& t = *in.tape();
  const Matrix& x = in.value();
  const Matrix& w = weight.value();
  Matrix out;
  if (map->identity) {
    out = x * w;
  } else {
    out = Matrix::Zero(static_cast<Eigen::Index>(map->out_count), cout);
    Matrix g, p;
    for (int k = 0; k < map->volume; ++k) {
      const auto& ir = map->in_rows[k];
      const auto& orow = map->out_rows[k];
      if (ir.empty()) continue;
      if (cin * cout <= detail::kDirectConvMax) {
        detail::accumulate_pairs(x, w.data() + k * cin * cout, cout, ir, orow, out);
        continue;
      }
      detail::gather_rows(x, ir, g);
      p.noalias() = g * w.middleRows(k * cin, cin);
      detail::scatter_add_rows(p, orow, out);
    }
  }
  if (bias.valid()) out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {in, weight, bias}, [in, weight, bias, map](ad::Tape& t, const Matrix& gout) {
    const Eigen::Index cin = in.cols();
    const Matrix& x = in.value();
    const Matrix& w = weight.value();
    const bool gi = in.requires_grad(), gw = weight.requires_grad();
    if (bias.valid() && bias.requires_grad()) t.grad_buffer(bias.id()) += gout.colwise().sum();
    if (map->identity) {
      if (gi) t.grad_buffer(in.id()).noalias() += gout * w.transpose();
      if (gw) t.grad_buffer(weight.id()).noalias() += x.transpose() * gout;
      return;
    }
    Matrix* dx = gi ? &t.grad_buffer(in.id()) : nullptr;
    Matrix* dw = gw ? &t.grad_buffer(weight.id()) : nullptr;
    Matrix g, dp, dg;
    for (int k = 0; k < map->volume; ++k) {
      const auto& ir = map->in_rows[k];
      const auto& orow = map->out_rows[k];
      if (ir.empty()) continue;
      detail::gather_rows(gout, orow, dp);
      if (gw) {
        detail::gather_rows(x, ir, g);
        dw->middleRows(k * cin, cin).noalias() += g.transpose() * dp;
      }
      if (gi) {
        dg.noalias() = dp * w.middleRows(k * cin, cin).transpose();
        detail::scatter_add_rows(dg, ir, *dx);
      }
    }
  });
}

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_size = 3;
  int stride = 1;
  bool transpose = false;
};

inline int kernel_volume(int k) { return k * k * k; }

/// Generalized sparse convolution. Stride 1 keeps coordinates; stride 2 maps
/// onto floor(c / 2s) * 2s and doubles the tensor stride.
class SparseConv {
 public:
  SparseConv() = default;
  SparseConv(ad::ParameterStore& store, const std::string& name, ConvSpec spec, Rng& rng, bool with_bias = true)
      : spec_(spec) {
    if (spec.transpose) throw std::invalid_argument("SparseConv: use SparseDeconv for transpose");
    if (spec.stride != 1 && spec.stride != 2) throw std::invalid_argument("SparseConv: stride must be 1 or 2");
    const int vol = kernel_volume(spec.kernel_size);
    weight_ = &store.create(name + ".w",
                            {static_cast<uint32_t>(vol), static_cast<uint32_t>(spec.in_channels),
                             static_cast<uint32_t>(spec.out_channels)},
                            vol * spec.in_channels, spec.out_channels);
    const double bound = std::sqrt(6.0 / (vol * spec.in_channels));
    weight_->value = rng.uniform_matrix(weight_->value.rows(), weight_->value.cols(), -bound, bound);
    if (with_bias) bias_ = &store.create(name + ".b", {static_cast<uint32_t>(spec.out_channels)}, 1, spec.out_channels);
  }

  const ConvSpec& spec() const { return spec_; }
  ad::Parameter* weight() const { return weight_; }
  ad::Parameter* bias() const { return bias_; }

  SparseVar operator()(Ctx& ctx, const SparseVar& in) const {
    CoordSetPtr out = spec_.stride == 1 ? in.coords : make_coords(downsample(*in.coords));
    return apply(ctx, in, out);
  }

  /// Evaluates on an explicit output set (must be at in.stride * spec.stride).
  SparseVar apply(Ctx& ctx, const SparseVar& in, const CoordSetPtr& out) const {
    if (in.channels() != spec_.in_channels)
      throw std::invalid_argument("SparseConv: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                                  std::to_string(in.channels()));
    if (out->stride() != in.stride() * spec_.stride) throw std::invalid_argument("SparseConv: output stride");
    auto map = ctx.maps.get(in.coords, out, spec_.kernel_size, false);
    ad::Var b = bias_ ? ctx.tape.param(*bias_) : ad::Var{};
    return {out, apply_kernel_map(in.feats, ctx.tape.param(*weight_), b, map)};
  }

 private:
  ConvSpec spec_;
  ad::Parameter* weight_ = nullptr;
  ad::Parameter* bias_ = nullptr;
};

/// Sparse transpose convolution halving the tensor stride (stride 2) or keeping it (stride 1).
class SparseDeconv {
 public:
  SparseDeconv() = default;
  SparseDeconv(ad::ParameterStore& store, const std::string& name, ConvSpec spec, Rng& rng, bool with_bias = true)
      : spec_(spec) {
    spec_.transpose = true;
    if (spec.stride != 1 && spec.stride != 2) throw std::invalid_argument("SparseDeconv: stride must be 1 or 2");
    const int vol = kernel_volume(spec.kernel_size);
    weight_ = &store.create(name + ".w",
                            {static_cast<uint32_t>(vol), static_cast<uint32_t>(spec.in_channels),
                             static_cast<uint32_t>(spec.out_channels)},
                            vol * spec.in_channels, spec.out_channels);
    const double bound = std::sqrt(6.0 / (vol * spec.in_channels));
    weight_->value = rng.uniform_matrix(weight_->value.rows(), weight_->value.cols(), -bound, bound);
    if (with_bias) bias_ = &store.create(name + ".b", {static_cast<uint32_t>(spec.out_channels)}, 1, spec.out_channels);
  }

  const ConvSpec& spec() const { return spec_; }
  ad::Parameter* weight() const { return weight_; }
  ad::Parameter* bias() const { return bias_; }

  int32_t out_stride(const SparseVar& in) const {
    if (in.stride() % spec_.stride != 0) throw std::invalid_argument("SparseDeconv: input stride not divisible");
    return in.stride() / spec_.stride;
  }

  /// Emits every child reachable through the kernel.
  SparseVar generative(Ctx& ctx, const SparseVar& in) const {
    auto out = make_coords(generative_children(*in.coords, out_stride(in), spec_.kernel_size));
    return targeted(ctx, in, out);
  }

  /// Emits exactly `target`; throws if some target is unreachable from the input.
  SparseVar targeted(Ctx& ctx, const SparseVar& in, const CoordSetPtr& target) const {
    if (in.channels() != spec_.in_channels) throw std::invalid_argument("SparseDeconv: input channel mismatch");
    if (target->stride() != out_stride(in)) throw std::invalid_argument("SparseDeconv: target stride");
    auto map = ctx.maps.get(in.coords, target, spec_.kernel_size, true);
    std::vector<char> reached(target->size(), 0);
    for (const auto& rows : map->out_rows)
      for (int32_t o : rows) reached[o] = 1;
    for (size_t i = 0; i < reached.size(); ++i)
      if (!reached[i]) throw std::invalid_argument("SparseDeconv: target coordinate not reachable from input");
    ad::Var b = bias_ ? ctx.tape.param(*bias_) : ad::Var{};
    return {target, apply_kernel_map(in.feats, ctx.tape.param(*weight_), b, map)};
  }

 private:
  ConvSpec spec_;
  ad::Parameter* weight_ = nullptr;
  ad::Parameter* bias_ = nullptr;
};

/// Dense layer applied per row: x W + b.
class Linear {
 public:
  Linear() = default;
  Linear(ad::ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
    weight_ = &store.create(name + ".w", {static_cast<uint32_t>(in), static_cast<uint32_t>(out)}, in, out);
    const double bound = std::sqrt(6.0 / in);
    weight_->value = rng.uniform_matrix(in, out, -bound, bound);
    bias_ = &store.create(name + ".b", {static_cast<uint32_t>(out)}, 1, out);
  }
  ad::Var operator()(ad::Tape& t, const ad::Var& x) const {
    if (x.cols() != weight_->value.rows()) throw std::invalid_argument("Linear: input width mismatch for " + weight_->name);
    return ad::add_bias(ad::matmul(x, t.param(*weight_)), t.param(*bias_));
  }
  ad::Parameter* weight() const { return weight_; }
  ad::Parameter* bias() const { return bias_; }

 private:
  ad::Parameter* weight_ = nullptr;
  ad::Parameter* bias_ = nullptr;
};

/// FC(H) -> ReLU -> FC(O).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng)
      : fc1_(store, name + ".fc1", in, hidden, rng), fc2_(store, name + ".fc2", hidden, out, rng) {}
  ad::Var operator()(ad::Tape& t, const ad::Var& x) const { return fc2_(t, ad::relu(fc1_(t, x))); }
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_, fc2_;
};

inline SparseVar relu(const SparseVar& x) { return {x.coords, ad::relu(x.feats)}; }

inline SparseVar add(const SparseVar& a, const SparseVar& b) {
  if (a.coords != b.coords && !(*a.coords == *b.coords)) throw std::invalid_argument("SparseVar add: coordinate mismatch");
  return {a.coords, ad::add(a.feats, b.feats)};
}

inline SparseVar sub(const SparseVar& a, const SparseVar& b) {
  if (a.coords != b.coords && !(*a.coords == *b.coords)) throw std::invalid_argument("SparseVar sub: coordinate mismatch");
  return {a.coords, ad::sub(a.feats, b.feats)};
}

/// Differentiable counterpart of hbm::concat_union: union support, channel
/// blocks [a | b], zero rows where a side is absent.
inline SparseVar concat_union(const SparseVar& a, const SparseVar& b) {
  if (a.stride() != b.stride()) throw std::invalid_argument("concat_union: stride mismatch");
  auto u = make_coords(set_union(*a.coords, *b.coords));
  std::vector<int32_t> ia(u->size()), ib(u->size());
  for (size_t i = 0; i < u->size(); ++i) {
    ia[i] = a.coords->find((*u)[i]);
    ib[i] = b.coords->find((*u)[i]);
  }
  return {u, ad::concat_cols({ad::gather_rows(a.feats, std::move(ia)), ad::gather_rows(b.feats, std::move(ib))})};
}

/// Rows of x at the coordinates of `keep` (all must be present).
inline SparseVar select(const SparseVar& x, const CoordSetPtr& keep) {
  std::vector<int32_t> rows(keep->size());
  for (size_t i = 0; i < keep->size(); ++i) {
    rows[i] = x.coords->find((*keep)[i]);
    if (rows[i] < 0) throw std::invalid_argument("select: coordinate not present");
  }
  return {keep, ad::gather_rows(x.feats, std::move(rows))};
}

}  // namespace hbm::nn
