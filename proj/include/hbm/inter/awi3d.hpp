#pragma once

#include <array>
#include <cmath>

#include "hbm/geometry/neighbors.hpp"
#include "hbm/nn/conv.hpp"

namespace hbm::inter {

/// Distance floor inside the inverse-distance weights.
inline constexpr double kAwiMinDistance = 1e-6;

/// Per-point, per-channel flows: row u holds channel i's displacement in
/// columns [3i, 3i + 3), voxel units.
struct MotionField {
  CoordSetPtr coords;
  ad::Var flows;
  Eigen::Index channels() const { return flows.cols() / 3; }
};

/// u_w^(i) = u + m^(i): warped positions in the same N x 3C layout.
inline ad::Var warp(ad::Tape& t, const CoordSet& coords, const ad::Var& flows) {
  if (static_cast<size_t>(flows.rows()) != coords.size() || flows.cols() % 3)
    throw std::invalid_argument("warp: flow field does not match the coordinate set");
  Matrix base(flows.rows(), flows.cols());
  for (size_t u = 0; u < coords.size(); ++u)
    for (Eigen::Index i = 0; i < flows.cols(); i += 3) {
      base(u, i) = coords[u].x;
      base(u, i + 1) = coords[u].y;
      base(u, i + 2) = coords[u].z;
    }
  return ad::add(t.constant(std::move(base)), flows);
}

/// Normalised 3DAWI weights for one query: w_j = d_j^-1 / max(sum_k d_k^-1, alpha),
/// each distance floored at 1e-6.
inline std::vector<double> awi_weights(const std::vector<double>& distances, double alpha) {
  std::vector<double> w(distances.size());
  double s = 0.0;
  for (size_t j = 0; j < w.size(); ++j) s += (w[j] = 1.0 / std::max(distances[j], kAwiMinDistance));
  const double denom = std::max(s, alpha);
  for (double& v : w) v /= denom;
  return w;
}

/// 3D adaptively weighted interpolation. For every point and channel, the 3
/// nearest reference coordinates to the warped position are blended with
/// awi_weights; distances are divided by `unit`. Differentiable in the warped
/// positions and the reference features; the neighbour sets are held fixed.
inline ad::Var awi3d(ad::Tape& t, const ad::Var& warped, const nn::SparseVar& ref, double alpha, double unit = 1.0) {
  if (ref.size() == 0) throw std::invalid_argument("awi3d: empty reference");
  const Eigen::Index n = warped.rows(), c = warped.cols() / 3;
  if (warped.cols() != 3 * c || c != ref.channels()) throw std::invalid_argument("awi3d: channel mismatch");
  const Matrix& p = warped.value();
  std::vector<Vec3> queries(static_cast<size_t>(n * c));
  for (Eigen::Index u = 0; u < n; ++u)
    for (Eigen::Index i = 0; i < c; ++i) queries[u * c + i] = {p(u, 3 * i), p(u, 3 * i + 1), p(u, 3 * i + 2)};
  KnnSearcher searcher(*ref.coords);
  auto nl = std::make_shared<NeighborList>(searcher(queries, 3));

  const Matrix& f = ref.feats.value();
  Matrix out = Matrix::Zero(n, c);
  uint64_t sig = 0;
  for (Eigen::Index q = 0; q < n * c; ++q) {
    const Eigen::Index u = q / c, i = q % c;
    double s = 0.0, acc = 0.0;
    for (int32_t e = nl->offsets[q]; e < nl->offsets[q + 1]; ++e) {
      const double d = nl->distance[e] / unit;
      const double g = 1.0 / std::max(d, kAwiMinDistance);
      s += g;
      acc += g * f(nl->index[e], i);
      sig = mix64(sig ^ (static_cast<uint64_t>(nl->index[e]) * 4 + (d <= kAwiMinDistance)));
    }
    sig = mix64(sig ^ (s >= alpha));
    out(u, i) = acc / std::max(s, alpha);
  }
  t.mark(sig);

  return t.record(std::move(out), {warped, ref.feats}, [warped, feats = ref.feats, nl, alpha, unit, c](ad::Tape& t, const Matrix& g) {
    const Matrix& f = feats.value();
    Matrix* dp = warped.requires_grad() ? &t.grad_buffer(warped.id()) : nullptr;
    Matrix* df = feats.requires_grad() ? &t.grad_buffer(feats.id()) : nullptr;
    const Eigen::Index n = warped.rows();
    for (Eigen::Index q = 0; q < n * c; ++q) {
      const Eigen::Index u = q / c, i = q % c;
      const double go = g(u, i);
      if (go == 0.0) continue;
      const int32_t b = nl->offsets[q], e_end = nl->offsets[q + 1];
      double s = 0.0, acc = 0.0;
      std::array<double, 3> gj{}, dj{};
      for (int32_t e = b; e < e_end; ++e) {
        dj[e - b] = nl->distance[e] / unit;
        gj[e - b] = 1.0 / std::max(dj[e - b], kAwiMinDistance);
        s += gj[e - b];
        acc += gj[e - b] * f(nl->index[e], i);
      }
      const double denom = std::max(s, alpha);
      const double out = acc / denom;
      for (int32_t e = b; e < e_end; ++e) {
        const int k = e - b;
        const double fv = f(nl->index[e], i);
        if (df) (*df)(nl->index[e], i) += go * gj[k] / denom;
        if (!dp || dj[k] <= kAwiMinDistance) continue;
        // d out / d g_j, then d g_j / d d_j = -1 / d_j^2, d d_j / d p = -(delta) / (|delta| unit).
        const double dout_dg = s >= alpha ? (fv - out) / s : fv / alpha;
        const double dg_dd = -1.0 / (dj[k] * dj[k]);
        const double coef = go * dout_dg * dg_dd / (nl->distance[e] * unit);
        for (int a = 0; a < 3; ++a) (*dp)(u, 3 * i + a) += coef * -nl->delta[e][a];
      }
    }
  });
}

}  // namespace hbm::inter
