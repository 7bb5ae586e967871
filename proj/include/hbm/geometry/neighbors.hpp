#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hbm/core/coord.hpp"

namespace hbm {

using Vec3 = std::array<double, 3>;

inline Vec3 to_vec3(const Coord& c) { return {double(c.x), double(c.y), double(c.z)}; }

/// Per-query neighbour lists in CSR layout. Entries of query q occupy
/// [offsets[q], offsets[q+1]), ordered by ascending distance.
struct NeighborList {
  std::vector<int32_t> offsets{0};
  std::vector<int32_t> index;     ///< Row in the reference set.
  std::vector<Vec3> delta;        ///< ref - query, voxel units.
  std::vector<double> distance;   ///< Euclidean, voxel units.

  size_t queries() const { return offsets.size() - 1; }
  int32_t count(size_t q) const { return offsets[q + 1] - offsets[q]; }
};

/// Uniform grid over a reference coordinate set, stored densely over the
/// bounding box of occupied cells (CSR rows per cell). The cell size grows
/// when the box would exceed kMaxCells; results do not depend on it.
class GridIndex {
 public:
  static constexpr int64_t kMaxCells = int64_t{1} << 22;

  GridIndex(const CoordSet& refs, double cell) : refs_(refs), cell_(cell) {
    if (!(cell > 0.0)) throw std::invalid_argument("GridIndex: cell size must be positive");
    if (refs.empty()) return;
    for (;;) {
      lo_ = hi_ = cell_of(to_vec3(refs[0]));
      for (size_t i = 1; i < refs.size(); ++i) {
        const auto key = cell_of(to_vec3(refs[i]));
        for (int a = 0; a < 3; ++a) {
          lo_[a] = std::min(lo_[a], key[a]);
          hi_[a] = std::max(hi_[a], key[a]);
        }
      }
      for (int a = 0; a < 3; ++a) dim_[a] = int64_t{hi_[a]} - lo_[a] + 1;
      if (dim_[0] * dim_[1] * dim_[2] <= std::max<int64_t>(kMaxCells, 8 * static_cast<int64_t>(refs.size()))) break;
      cell_ *= 2.0;
    }
    start_.assign(static_cast<size_t>(dim_[0] * dim_[1] * dim_[2] + 1), 0);
    std::vector<int64_t> slot(refs.size());
    for (size_t i = 0; i < refs.size(); ++i) {
      slot[i] = linear(cell_of(to_vec3(refs[i])));
      ++start_[static_cast<size_t>(slot[i]) + 1];
    }
    for (size_t j = 1; j < start_.size(); ++j) start_[j] += start_[j - 1];
    rows_.resize(refs.size());
    std::vector<int32_t> fill(start_.begin(), start_.end() - 1);
    for (size_t i = 0; i < refs.size(); ++i) rows_[fill[static_cast<size_t>(slot[i])]++] = static_cast<int32_t>(i);
  }

  const CoordSet& refs() const { return refs_; }

  /// Up to k nearest refs within radius r (r = inf for unbounded).
  void query(const Vec3& q, double r, int k, std::vector<std::pair<double, int32_t>>& out) const {
    out.clear();
    if (refs_.empty() || k <= 0) return;
    if (!std::isfinite(q[0]) || !std::isfinite(q[1]) || !std::isfinite(q[2]))
      throw std::domain_error("neighbour search: non-finite query position");
    const auto qc = cell_of(q);
    const double r2 = std::isinf(r) ? std::numeric_limits<double>::infinity() : r * r;
    // Rings needed to cover the radius, or the whole reference extent.
    int64_t max_ring = 0;
    for (int a = 0; a < 3; ++a)
      max_ring = std::max({max_ring, std::abs(qc[a] - int64_t{lo_[a]}), std::abs(qc[a] - int64_t{hi_[a]})});
    if (!std::isinf(r)) max_ring = std::min<int64_t>(max_ring, static_cast<int64_t>(std::ceil(r / cell_)) + 1);

    auto better = [](const std::pair<double, int32_t>& a, const std::pair<double, int32_t>& b) {
      return a.first < b.first || (a.first == b.first && a.second < b.second);
    };
    const size_t kk = static_cast<size_t>(k);
    // `out` stays sorted and holds the best min(k, seen) hits.
    for (int64_t ring = 0; ring <= max_ring; ++ring) {
      visit_ring(qc, ring, [&](int32_t row) {
        const Coord& c = refs_[row];
        const double dx = c.x - q[0], dy = c.y - q[1], dz = c.z - q[2];
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 > r2) return;
        const std::pair<double, int32_t> hit{d2, row};
        if (out.size() == kk) {
          if (!better(hit, out.back())) return;
          out.pop_back();
        }
        out.insert(std::upper_bound(out.begin(), out.end(), hit, better), hit);
      });
      // Points in later rings are at least ring * cell away from q.
      if (out.size() == kk) {
        const double bound = static_cast<double>(ring) * cell_;
        if (out.back().first < bound * bound) break;
      }
    }
  }

 private:
  using Key = std::array<int64_t, 3>;

  Key cell_of(const Vec3& p) const {
    return {static_cast<int64_t>(std::floor(p[0] / cell_)), static_cast<int64_t>(std::floor(p[1] / cell_)),
            static_cast<int64_t>(std::floor(p[2] / cell_))};
  }
  int64_t linear(const Key& k) const {
    return ((k[2] - lo_[2]) * dim_[1] + (k[1] - lo_[1])) * dim_[0] + (k[0] - lo_[0]);
  }

  /// Cells of the cube shell at Chebyshev distance `ring`, clipped to the box.
  template <class F>
  void visit_ring(const Key& c, int64_t ring, F&& f) const {
    const int64_t z0 = std::max(c[2] - ring, lo_[2]), z1 = std::min(c[2] + ring, hi_[2]);
    const int64_t y0 = std::max(c[1] - ring, lo_[1]), y1 = std::min(c[1] + ring, hi_[1]);
    const int64_t x0 = std::max(c[0] - ring, lo_[0]), x1 = std::min(c[0] + ring, hi_[0]);
    auto cell = [&](int64_t x, int64_t y, int64_t z) {
      const auto j = static_cast<size_t>(linear({x, y, z}));
      for (int32_t e = start_[j]; e < start_[j + 1]; ++e) f(rows_[e]);
    };
    for (int64_t z = z0; z <= z1; ++z)
      for (int64_t y = y0; y <= y1; ++y) {
        if (std::abs(z - c[2]) == ring || std::abs(y - c[1]) == ring) {
          for (int64_t x = x0; x <= x1; ++x) cell(x, y, z);
        } else {
          if (c[0] - ring >= lo_[0] && c[0] - ring <= hi_[0]) cell(c[0] - ring, y, z);
          if (c[0] + ring >= lo_[0] && c[0] + ring <= hi_[0]) cell(c[0] + ring, y, z);
        }
      }
  }

  const CoordSet& refs_;
  double cell_;
  std::vector<int32_t> start_, rows_;
  Key lo_{}, hi_{};
  std::array<int64_t, 3> dim_{};
};

namespace detail {
inline NeighborList search(const std::vector<Vec3>& queries, const GridIndex& grid, double r, int k) {
  NeighborList nl;
  nl.offsets.reserve(queries.size() + 1);
  std::vector<std::pair<double, int32_t>> hits;
  for (const Vec3& q : queries) {
    grid.query(q, r, k, hits);
    for (const auto& [d2, row] : hits) {
      const Coord& c = grid.refs()[row];
      nl.index.push_back(row);
      nl.delta.push_back({c.x - q[0], c.y - q[1], c.z - q[2]});
      nl.distance.push_back(std::sqrt(d2));
    }
    nl.offsets.push_back(static_cast<int32_t>(nl.index.size()));
  }
  return nl;
}
}  // namespace detail

/// Up to K nearest refs with distance <= r per query. Ties resolve by
/// canonical coordinate order of the refs.
inline NeighborList ball_knn(const std::vector<Vec3>& queries, const CoordSet& refs, double r, int k) {
  if (!(r > 0.0)) throw std::invalid_argument("ball_knn: radius must be positive");
  if (k < 1) throw std::invalid_argument("ball_knn: K must be >= 1");
  const double cell = std::isinf(r) ? std::max(2.0 * refs.stride(), 1.0) : r;
  GridIndex grid(refs, cell);
  return detail::search(queries, grid, r, k);
}

inline NeighborList ball_knn(const CoordSet& queries, const CoordSet& refs, double r, int k) {
  std::vector<Vec3> q;
  q.reserve(queries.size());
  for (const auto& c : queries) q.push_back(to_vec3(c));
  return ball_knn(q, refs, r, k);
}

/// Exactly min(k, |refs|) nearest refs per query, unbounded radius.
inline NeighborList knn(const std::vector<Vec3>& queries, const CoordSet& refs, int k = 3) {
  if (refs.empty()) throw std::invalid_argument("knn: empty reference set");
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  GridIndex grid(refs, std::max(2.0 * refs.stride(), 1.0));
  return detail::search(queries, grid, std::numeric_limits<double>::infinity(), k);
}

/// Reusable index for repeated unbounded queries against one reference set.
class KnnSearcher {
 public:
  explicit KnnSearcher(const CoordSet& refs, double cell = 0.0)
      : grid_(refs, cell > 0 ? cell : std::max(2.0 * refs.stride(), 1.0)) {
    if (refs.empty()) throw std::invalid_argument("knn: empty reference set");
  }
  NeighborList operator()(const std::vector<Vec3>& queries, int k) const {
    return detail::search(queries, grid_, std::numeric_limits<double>::infinity(), k);
  }

 private:
  GridIndex grid_;
};

}  // namespace hbm
