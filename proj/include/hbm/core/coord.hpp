#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbm {

/// Integer voxel coordinate at original-resolution scale.
struct Coord {
  int32_t x = 0;
  int32_t y = 0;
  int32_t z = 0;

  friend constexpr bool operator==(const Coord&, const Coord&) = default;

  constexpr Coord operator+(const Coord& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Coord operator-(const Coord& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Coord operator*(int32_t s) const { return {x * s, y * s, z * s}; }
};

/// Canonical order: lexicographic by (z, y, x).
struct CanonicalLess {
  constexpr bool operator()(const Coord& a, const Coord& b) const {
    if (a.z != b.z) return a.z < b.z;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  }
};

inline constexpr int32_t floor_div(int32_t a, int32_t b) {
  int32_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// Snap a coordinate onto the lattice of the given stride (floor per axis).
inline constexpr Coord floor_to_stride(const Coord& c, int32_t stride) {
  return {floor_div(c.x, stride) * stride, floor_div(c.y, stride) * stride,
          floor_div(c.z, stride) * stride};
}

/// Packs a coordinate into 64 bits; components must lie in [-2^20, 2^20).
inline constexpr uint64_t pack_coord(const Coord& c) {
  constexpr int32_t kBias = 1 << 20;
  return (static_cast<uint64_t>(static_cast<uint32_t>(c.z + kBias)) << 42) |
         (static_cast<uint64_t>(static_cast<uint32_t>(c.y + kBias)) << 21) |
         static_cast<uint64_t>(static_cast<uint32_t>(c.x + kBias));
}

inline constexpr bool coord_in_pack_range(const Coord& c) {
  constexpr int32_t kLim = 1 << 20;
  return c.x >= -kLim && c.x < kLim && c.y >= -kLim && c.y < kLim && c.z >= -kLim &&
         c.z < kLim;
}

inline uint64_t mix64(uint64_t v) {
  v ^= v >> 30;
  v *= 0xbf58476d1ce4e5b9ULL;
  v ^= v >> 27;
  v *= 0x94d049bb133111ebULL;
  v ^= v >> 31;
  return v;
}

/// Open-addressing map from coordinate to row index. Built once, read-only after.
class CoordIndex {
 public:
  CoordIndex() = default;

  explicit CoordIndex(const std::vector<Coord>& coords) {
    size_t cap = 16;
    while (cap < coords.size() * 2 + 1) cap <<= 1;
    keys_.assign(cap, kEmpty);
    rows_.assign(cap, -1);
    mask_ = cap - 1;
    for (size_t i = 0; i < coords.size(); ++i) {
      if (!coord_in_pack_range(coords[i])) throw std::out_of_range("coordinate out of packable range");
      const uint64_t key = pack_coord(coords[i]);
      size_t slot = mix64(key) & mask_;
      while (keys_[slot] != kEmpty) {
        if (keys_[slot] == key) throw std::invalid_argument("duplicate coordinate in index");
        slot = (slot + 1) & mask_;
      }
      keys_[slot] = key;
      rows_[slot] = static_cast<int32_t>(i);
    }
  }

  /// Row of `c`, or -1.
  int32_t find(const Coord& c) const {
    if (keys_.empty() || !coord_in_pack_range(c)) return -1;
    const uint64_t key = pack_coord(c);
    size_t slot = mix64(key) & mask_;
    while (true) {
      const uint64_t k = keys_[slot];
      if (k == key) return rows_[slot];
      if (k == kEmpty) return -1;
      slot = (slot + 1) & mask_;
    }
  }

 private:
  static constexpr uint64_t kEmpty = ~uint64_t{0};
  std::vector<uint64_t> keys_;
  std::vector<int32_t> rows_;
  size_t mask_ = 0;
};

/// Distinct, stride-aligned coordinates in canonical order, with an O(1) row index.
class CoordSet {
 public:
  CoordSet() : stride_(1), index_(coords_) {}

  /// Deduplicates and sorts. Throws if a coordinate is not a multiple of `stride`.
  CoordSet(std::vector<Coord> coords, int32_t stride) : stride_(stride) {
    if (stride <= 0) throw std::invalid_argument("stride must be positive");
    for (const auto& c : coords) {
      if (c.x % stride != 0 || c.y % stride != 0 || c.z % stride != 0) {
        throw std::invalid_argument("coordinate (" + std::to_string(c.x) + "," +
                                    std::to_string(c.y) + "," + std::to_string(c.z) +
                                    ") is not aligned to stride " + std::to_string(stride));
      }
    }
    std::sort(coords.begin(), coords.end(), CanonicalLess{});
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    coords_ = std::move(coords);
    index_ = CoordIndex(coords_);
  }

  size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  int32_t stride() const { return stride_; }
  const Coord& operator[](size_t i) const { return coords_[i]; }
  const std::vector<Coord>& coords() const { return coords_; }
  auto begin() const { return coords_.begin(); }
  auto end() const { return coords_.end(); }

  int32_t find(const Coord& c) const { return index_.find(c); }
  bool contains(const Coord& c) const { return find(c) >= 0; }

  friend bool operator==(const CoordSet& a, const CoordSet& b) {
    return a.stride_ == b.stride_ && a.coords_ == b.coords_;
  }

 private:
  int32_t stride_;
  std::vector<Coord> coords_;
  CoordIndex index_;
};

/// Parent lattice points at twice the stride.
inline CoordSet downsample(const CoordSet& in) {
  const int32_t s = in.stride() * 2;
  std::vector<Coord> out;
  out.reserve(in.size());
  for (const auto& c : in) out.push_back(floor_to_stride(c, s));
  return CoordSet(std::move(out), s);
}

inline CoordSet set_union(const CoordSet& a, const CoordSet& b) {
  if (a.stride() != b.stride()) throw std::invalid_argument("set_union: stride mismatch");
  std::vector<Coord> all;
  all.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(all), CanonicalLess{});
  return CoordSet(std::move(all), a.stride());
}

inline CoordSet set_intersection(const CoordSet& a, const CoordSet& b) {
  std::vector<Coord> out;
  for (const auto& c : a)
    if (b.contains(c)) out.push_back(c);
  return CoordSet(std::move(out), a.stride());
}

}  // namespace hbm
