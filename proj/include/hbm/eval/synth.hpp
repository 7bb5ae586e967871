#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbm/sparse_tensor.hpp"

namespace hbm::eval {

enum class SynthKind { RigidTranslate, RigidRotate, TwoBlobArticulate, BreathingSphere };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "rigid-translate") return SynthKind::RigidTranslate;
  if (s == "rigid-rotate") return SynthKind::RigidRotate;
  if (s == "two-blob-articulate") return SynthKind::TwoBlobArticulate;
  if (s == "breathing-sphere") return SynthKind::BreathingSphere;
  throw std::invalid_argument("unknown sequence kind: " + s);
}

struct SynthParams {
  SynthKind kind = SynthKind::RigidTranslate;
  int frames = 5;
  int bit_depth = 10;
  size_t points = 2000;                  ///< Approximate points per frame.
  std::array<int32_t, 3> velocity{1, 0, 0};  ///< Voxels per frame (rigid-translate).
  double angle = 0.03;                   ///< Radians per frame (rigid-rotate).
  uint64_t seed = 1;
};

namespace detail {

struct Ellipsoid {
  std::array<double, 3> center, radii;
};

/// Uniformly spread surface samples of an ellipsoid (unit-sphere directions scaled).
inline std::vector<std::array<double, 3>> sample_surface(const Ellipsoid& e, size_t n, Rng& rng) {
  std::vector<std::array<double, 3>> out(n);
  for (auto& p : out) {
    double x, y, z, r2;
    do {
      x = rng.normal();
      y = rng.normal();
      z = rng.normal();
      r2 = x * x + y * y + z * z;
    } while (r2 < 1e-12);
    const double s = 1.0 / std::sqrt(r2);
    p = {e.center[0] + e.radii[0] * x * s, e.center[1] + e.radii[1] * y * s, e.center[2] + e.radii[2] * z * s};
  }
  return out;
}

inline CoordSetPtr voxelize(const std::vector<std::array<double, 3>>& pts, int bit_depth) {
  const double hi = std::ldexp(1.0, bit_depth) - 1;
  std::vector<Coord> c;
  c.reserve(pts.size());
  for (const auto& p : pts) {
    auto q = [&](double v) { return static_cast<int32_t>(std::clamp(std::round(v), 0.0, hi)); };
    c.push_back({q(p[0]), q(p[1]), q(p[2])});
  }
  return make_coords(std::move(c), 1);
}

/// Samples per surface so the voxelised shell holds roughly `points` voxels.
inline size_t samples_for(size_t points) { return points * 12; }

/// Radius of a sphere whose voxel shell has about `points` voxels (area ~ count).
inline double radius_for(size_t points) { return std::sqrt(static_cast<double>(points) / (4.0 * M_PI)); }

}  // namespace detail

/// Deterministic voxelised frames. Shapes are ellipsoid shells sized so one
/// frame holds about `points` voxels; motion is known by construction.
inline std::vector<CoordSetPtr> synth_sequence(const SynthParams& p) {
  if (p.frames < 1) throw std::invalid_argument("synth: frames must be >= 1");
  if (p.bit_depth < 5 || p.bit_depth > 16) throw std::invalid_argument("synth: bit depth must lie in [5, 16]");
  if (p.points < 10) throw std::invalid_argument("synth: too few points");
  Rng rng(p.seed);
  const double grid = std::ldexp(1.0, p.bit_depth);
  const double r = detail::radius_for(p.points);
  if (4 * r > grid) throw std::invalid_argument("synth: point count too large for the bit depth");
  const std::array<double, 3> c{grid / 2, grid / 2, grid / 2};
  // Slightly anisotropic so the shape has no rotational symmetry.
  detail::Ellipsoid body{c, {r * 1.25, r, r * 0.8}};
  std::vector<CoordSetPtr> out;
  const size_t n = detail::samples_for(p.points);
  switch (p.kind) {
    case SynthKind::RigidTranslate: {
      const auto base = detail::sample_surface(body, n, rng);
      // Start far enough from the border that the motion stays inside the grid.
      std::array<double, 3> start{};
      for (int a = 0; a < 3; ++a) start[a] = -0.5 * p.velocity[a] * (p.frames - 1);
      for (int k = 0; k < p.frames; ++k) {
        auto pts = base;
        for (auto& q : pts)
          for (int a = 0; a < 3; ++a) q[a] = std::round(q[a] + start[a]) + static_cast<double>(p.velocity[a]) * k;
        out.push_back(detail::voxelize(pts, p.bit_depth));
      }
      break;
    }
    case SynthKind::RigidRotate: {
      const auto base = detail::sample_surface(body, n, rng);
      for (int k = 0; k < p.frames; ++k) {
        const double a = p.angle * k, ca = std::cos(a), sa = std::sin(a);
        auto pts = base;
        for (auto& q : pts) {
          const double x = q[0] - c[0], y = q[1] - c[1];
          q[0] = c[0] + ca * x - sa * y;
          q[1] = c[1] + sa * x + ca * y;
        }
        out.push_back(detail::voxelize(pts, p.bit_depth));
      }
      break;
    }
    case SynthKind::TwoBlobArticulate: {
      detail::Ellipsoid a{{c[0] - 0.9 * r, c[1], c[2]}, {r * 0.9, r * 0.7, r * 0.7}};
      detail::Ellipsoid b{{c[0] + 0.9 * r, c[1], c[2]}, {r * 0.7, r * 0.6, r * 0.6}};
      const auto sa = detail::sample_surface(a, n / 2, rng), sb = detail::sample_surface(b, n / 2, rng);
      for (int k = 0; k < p.frames; ++k) {
        // Blob b swings about the joint between the blobs.
        const double ang = 0.08 * std::sin(0.5 * k), ca = std::cos(ang), s = std::sin(ang);
        auto pts = sa;
        for (auto q : sb) {
          const double x = q[0] - c[0], z = q[2] - c[2];
          pts.push_back({c[0] + ca * x - s * z, q[1], c[2] + s * x + ca * z});
        }
        out.push_back(detail::voxelize(pts, p.bit_depth));
      }
      break;
    }
    case SynthKind::BreathingSphere: {
      for (int k = 0; k < p.frames; ++k) {
        const double f = 1.0 + 0.1 * std::sin(0.6 * k);
        Rng frame_rng(p.seed * 1000003 + static_cast<uint64_t>(k));
        detail::Ellipsoid e{c, {r * f, r * f, r * f}};
        out.push_back(detail::voxelize(detail::sample_surface(e, static_cast<size_t>(n * f * f), frame_rng), p.bit_depth));
      }
      break;
    }
  }
  return out;
}

}  // namespace hbm::eval
