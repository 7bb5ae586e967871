#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "hbm/core/coord.hpp"
#include "hbm/core/types.hpp"

namespace hbm {

using CoordSetPtr = std::shared_ptr<const CoordSet>;

inline CoordSetPtr make_coords(std::vector<Coord> coords, int32_t stride) {
  return std::make_shared<const CoordSet>(std::move(coords), stride);
}
inline CoordSetPtr make_coords(CoordSet set) { return std::make_shared<const CoordSet>(std::move(set)); }

/// Occupied voxels (shared, immutable coordinate set) with one feature row per voxel.
class SparseTensor {
 public:
  SparseTensor() : coords_(std::make_shared<const CoordSet>()), features_(0, 0) {}

  SparseTensor(CoordSetPtr coords, Matrix features)
      : coords_(std::move(coords)), features_(std::move(features)) {
    if (!coords_) throw std::invalid_argument("SparseTensor: null coordinate set");
    if (static_cast<size_t>(features_.rows()) != coords_->size())
      throw std::invalid_argument("SparseTensor: feature rows != coordinate count");
  }

  const CoordSet& coords() const { return *coords_; }
  const CoordSetPtr& coords_ptr() const { return coords_; }
  const Matrix& features() const { return features_; }
  Matrix& features() { return features_; }
  int32_t stride() const { return coords_->stride(); }
  size_t size() const { return coords_->size(); }
  Eigen::Index channels() const { return features_.cols(); }

  /// Feature row for `c`; throws when absent.
  auto row(const Coord& c) const {
    const int32_t r = coords_->find(c);
    if (r < 0) throw std::out_of_range("SparseTensor::row: coordinate not present");
    return features_.row(r);
  }

 private:
  CoordSetPtr coords_;
  Matrix features_;
};

/// Binary-occupancy tensor (all-ones single channel) over `coords`.
inline SparseTensor occupancy_tensor(CoordSetPtr coords) {
  Matrix ones = Matrix::Ones(static_cast<Eigen::Index>(coords->size()), 1);
  return SparseTensor(std::move(coords), std::move(ones));
}

/// Union of supports; shared coordinates get [a | b], one-sided ones are zero-filled.
inline SparseTensor concat_union(const SparseTensor& a, const SparseTensor& b) {
  if (a.stride() != b.stride()) throw std::invalid_argument("concat_union: stride mismatch");
  auto coords = make_coords(set_union(a.coords(), b.coords()));
  const Eigen::Index ca = a.channels(), cb = b.channels();
  Matrix f = Matrix::Zero(static_cast<Eigen::Index>(coords->size()), ca + cb);
  for (size_t i = 0; i < coords->size(); ++i) {
    const Coord& c = (*coords)[i];
    const int32_t ra = a.coords().find(c);
    const int32_t rb = b.coords().find(c);
    if (ra >= 0) f.row(i).head(ca) = a.features().row(ra);
    if (rb >= 0) f.row(i).tail(cb) = b.features().row(rb);
  }
  return SparseTensor(std::move(coords), std::move(f));
}

/// Rows of `t` whose coordinates are in `keep`.
inline SparseTensor prune(const SparseTensor& t, const CoordSet& keep) {
  std::vector<Coord> kept;
  std::vector<int32_t> rows;
  for (size_t i = 0; i < t.size(); ++i) {
    if (keep.contains(t.coords()[i])) {
      kept.push_back(t.coords()[i]);
      rows.push_back(static_cast<int32_t>(i));
    }
  }
  Matrix f(static_cast<Eigen::Index>(rows.size()), t.channels());
  for (size_t i = 0; i < rows.size(); ++i) f.row(i) = t.features().row(rows[i]);
  return SparseTensor(make_coords(std::move(kept), t.stride()), std::move(f));
}

/// Axis-aligned box of lattice points, inclusive corners.
struct BoundingBox {
  Coord min;
  Coord max;
};

/// Dense lattice array; element (i, j, k, c) lives at min + (i, j, k) * stride.
struct DenseGrid {
  Coord origin;
  int32_t stride = 1;
  int32_t nx = 0, ny = 0, nz = 0;
  int32_t channels = 0;
  std::vector<double> data;

  size_t offset(int32_t i, int32_t j, int32_t k, int32_t c) const {
    return ((static_cast<size_t>(k) * ny + j) * nx + i) * channels + c;
  }
  double& at(int32_t i, int32_t j, int32_t k, int32_t c) { return data[offset(i, j, k, c)]; }
  double at(int32_t i, int32_t j, int32_t k, int32_t c) const { return data[offset(i, j, k, c)]; }
};

inline DenseGrid to_dense(const SparseTensor& t, const BoundingBox& box) {
  const int32_t s = t.stride();
  DenseGrid g;
  g.origin = box.min;
  g.stride = s;
  g.nx = (box.max.x - box.min.x) / s + 1;
  g.ny = (box.max.y - box.min.y) / s + 1;
  g.nz = (box.max.z - box.min.z) / s + 1;
  g.channels = static_cast<int32_t>(t.channels());
  if (g.nx <= 0 || g.ny <= 0 || g.nz <= 0) throw std::invalid_argument("to_dense: empty box");
  g.data.assign(static_cast<size_t>(g.nx) * g.ny * g.nz * g.channels, 0.0);
  for (size_t r = 0; r < t.size(); ++r) {
    const Coord d = t.coords()[r] - box.min;
    if (d.x < 0 || d.y < 0 || d.z < 0 || d.x % s || d.y % s || d.z % s || d.x / s >= g.nx ||
        d.y / s >= g.ny || d.z / s >= g.nz)
      throw std::out_of_range("to_dense: coordinate outside bounding box");
    for (int32_t c = 0; c < g.channels; ++c) g.at(d.x / s, d.y / s, d.z / s, c) = t.features()(r, c);
  }
  return g;
}

/// Lattice points with any nonzero channel become rows.
inline SparseTensor from_dense(const DenseGrid& g) {
  std::vector<Coord> coords;
  for (int32_t k = 0; k < g.nz; ++k)
    for (int32_t j = 0; j < g.ny; ++j)
      for (int32_t i = 0; i < g.nx; ++i) {
        bool nz = false;
        for (int32_t c = 0; c < g.channels && !nz; ++c) nz = g.at(i, j, k, c) != 0.0;
        if (nz) coords.push_back(g.origin + Coord{i, j, k} * g.stride);
      }
  auto set = make_coords(std::move(coords), g.stride);
  Matrix f(static_cast<Eigen::Index>(set->size()), g.channels);
  for (size_t r = 0; r < set->size(); ++r) {
    const Coord d = (*set)[r] - g.origin;
    for (int32_t c = 0; c < g.channels; ++c) f(r, c) = g.at(d.x / g.stride, d.y / g.stride, d.z / g.stride, c);
  }
  return SparseTensor(std::move(set), std::move(f));
}

inline BoundingBox bounding_box(const CoordSet& s) {
  if (s.empty()) throw std::invalid_argument("bounding_box: empty set");
  BoundingBox b{s[0], s[0]};
  for (const auto& c : s) {
    b.min = {std::min(b.min.x, c.x), std::min(b.min.y, c.y), std::min(b.min.z, c.z)};
    b.max = {std::max(b.max.x, c.x), std::max(b.max.y, c.y), std::max(b.max.z, c.z)};
  }
  return b;
}

}  // namespace hbm
