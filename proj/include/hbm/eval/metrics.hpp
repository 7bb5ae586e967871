#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hbm/geometry/neighbors.hpp"

namespace hbm::eval {

/// Reported in CSV output in place of an infinite PSNR.
inline constexpr double kPsnrCap = 999.0;

inline std::vector<Vec3> to_points(const CoordSet& c) {
  std::vector<Vec3> p;
  p.reserve(c.size());
  for (const auto& v : c) p.push_back(to_vec3(v));
  return p;
}

/// Unit normals by PCA over each point's 9 nearest neighbours (itself
/// included): eigenvector of the smallest covariance eigenvalue. Sign is
/// arbitrary; only squared projections use it.
inline std::vector<Vec3> estimate_normals(const CoordSet& cloud, int k = 9) {
  const auto pts = to_points(cloud);
  const NeighborList nl = knn(pts, cloud, k);
  std::vector<Vec3> normals(pts.size());
  for (size_t q = 0; q < pts.size(); ++q) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    const int32_t b = nl.offsets[q], e = nl.offsets[q + 1];
    for (int32_t j = b; j < e; ++j) mean += Eigen::Vector3d(pts[nl.index[j]].data());
    mean /= static_cast<double>(e - b);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int32_t j = b; j < e; ++j) {
      const Eigen::Vector3d d = Eigen::Vector3d(pts[nl.index[j]].data()) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d n = es.eigenvectors().col(0);
    normals[q] = {n.x(), n.y(), n.z()};
  }
  return normals;
}

/// Mean squared error from every point of `a` to its nearest point of `b`;
/// with `b_normals`, the error is projected onto the neighbour's normal.
inline double directional_mse(const CoordSet& a, const CoordSet& b, const std::vector<Vec3>* b_normals = nullptr) {
  if (a.empty() || b.empty()) throw std::invalid_argument("metric: empty point cloud");
  const NeighborList nl = knn(to_points(a), b, 1);
  double sum = 0.0;
  for (size_t q = 0; q < a.size(); ++q) {
    const int32_t e = nl.offsets[q];
    const Vec3& d = nl.delta[e];
    if (b_normals) {
      const Vec3& n = (*b_normals)[nl.index[e]];
      const double p = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
      sum += p * p;
    } else {
      sum += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    }
  }
  return sum / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(3.0 * peak * peak / mse);
}

/// Point-to-point PSNR over the symmetric (max of both directions) MSE.
inline double d1_psnr(const CoordSet& a, const CoordSet& b, double peak) {
  return psnr_from_mse(std::max(directional_mse(a, b), directional_mse(b, a)), peak);
}

/// Point-to-plane PSNR; each direction projects onto the target cloud's normals.
inline double d2_psnr(const CoordSet& a, const CoordSet& b, double peak) {
  const auto na = estimate_normals(a), nb = estimate_normals(b);
  return psnr_from_mse(std::max(directional_mse(a, b, &nb), directional_mse(b, a, &na)), peak);
}

inline double cap_psnr(double v) { return std::isfinite(v) ? std::min(v, kPsnrCap) : kPsnrCap; }

struct RdPoint {
  double bpp = 0.0;
  double psnr = 0.0;
};

/// Least-squares cubic in x, coefficients c0..c3 (ascending powers).
inline Eigen::Vector4d fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 4);
  Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
  for (size_t i = 0; i < x.size(); ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = x[i];
    a(i, 2) = x[i] * x[i];
    a(i, 3) = x[i] * x[i] * x[i];
    b(i) = y[i];
  }
  return a.colPivHouseholderQr().solve(b);
}

inline double cubic_integral(const Eigen::Vector4d& c, double lo, double hi) {
  auto prim = [&](double x) { return c(0) * x + c(1) * x * x / 2 + c(2) * x * x * x / 3 + c(3) * x * x * x * x / 4; };
  return prim(hi) - prim(lo);
}

/// Bjontegaard delta rate in percent: cubic fits of log10(rate) against PSNR,
/// averaged over the common PSNR interval. Negative means the test curve
/// needs fewer bits.
inline double bd_rate(const std::vector<RdPoint>& anchor, const std::vector<RdPoint>& test) {
  if (anchor.size() < 4 || test.size() < 4) throw std::invalid_argument("bd_rate: need at least 4 points per curve");
  auto split = [](const std::vector<RdPoint>& c, std::vector<double>& p, std::vector<double>& r) {
    for (const auto& pt : c) {
      if (!(pt.bpp > 0.0)) throw std::invalid_argument("bd_rate: rates must be positive");
      p.push_back(pt.psnr);
      r.push_back(std::log10(pt.bpp));
    }
  };
  std::vector<double> pa, ra, pt, rt;
  split(anchor, pa, ra);
  split(test, pt, rt);
  const double lo = std::max(*std::min_element(pa.begin(), pa.end()), *std::min_element(pt.begin(), pt.end()));
  const double hi = std::min(*std::max_element(pa.begin(), pa.end()), *std::max_element(pt.begin(), pt.end()));
  if (!(hi > lo)) throw std::invalid_argument("bd_rate: PSNR ranges do not overlap");
  const double ia = cubic_integral(fit_cubic(pa, ra), lo, hi);
  const double it = cubic_integral(fit_cubic(pt, rt), lo, hi);
  return (std::pow(10.0, (it - ia) / (hi - lo)) - 1.0) * 100.0;
}

}  // namespace hbm::eval
