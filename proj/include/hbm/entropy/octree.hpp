#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <vector>

#include "hbm/core/coord.hpp"
#include "hbm/entropy/latent_codec.hpp"

namespace hbm::entropy {

inline constexpr int kMaxOctreeDepth = 21;

namespace detail {

/// Interleaves (z, y, x) bits so the 3-bit group of each level is dz*4 + dy*2 + dx.
inline uint64_t morton(uint32_t x, uint32_t y, uint32_t z, int depth) {
  uint64_t m = 0;
  for (int b = depth - 1; b >= 0; --b)
    m = (m << 3) | (((z >> b) & 1u) << 2) | (((y >> b) & 1u) << 1) | ((x >> b) & 1u);
  return m;
}

inline Coord unmorton(uint64_t m, int depth) {
  Coord c{0, 0, 0};
  for (int b = 0; b < depth; ++b) {
    const uint64_t g = m >> (3 * b);
    c.x |= static_cast<int32_t>((g & 1u) << b);
    c.y |= static_cast<int32_t>(((g >> 1) & 1u) << b);
    c.z |= static_cast<int32_t>(((g >> 2) & 1u) << b);
  }
  return c;
}

/// Sorted Morton codes of coords / stride; throws if any lies outside [0, 2^depth)^3.
inline std::vector<uint64_t> morton_codes(const CoordSet& coords, int depth) {
  if (depth < 0 || depth > kMaxOctreeDepth) throw std::invalid_argument("octree: depth out of range");
  const int64_t limit = int64_t{1} << depth;
  std::vector<uint64_t> m;
  m.reserve(coords.size());
  for (const auto& c : coords) {
    const int64_t x = c.x / coords.stride(), y = c.y / coords.stride(), z = c.z / coords.stride();
    if (x < 0 || y < 0 || z < 0 || x >= limit || y >= limit || z >= limit)
      throw std::invalid_argument("octree: coordinate outside [0, 2^depth)");
    m.push_back(morton(static_cast<uint32_t>(x), static_cast<uint32_t>(y), static_cast<uint32_t>(z), depth));
  }
  std::sort(m.begin(), m.end());
  return m;
}

}  // namespace detail

/// Breadth-first occupancy bytes (bit i set when child i is occupied, child
/// index dz*4 + dy*2 + dx), root first, nodes of a level in Morton order.
inline std::vector<uint8_t> octree_occupancy_bytes(const CoordSet& coords, int depth) {
  const auto codes = detail::morton_codes(coords, depth);
  std::vector<uint8_t> out;
  for (int level = 0; level < depth; ++level) {
    const int child_shift = 3 * (depth - level - 1);
    uint64_t parent = ~uint64_t{0};
    uint8_t byte = 0;
    for (uint64_t m : codes) {
      const uint64_t p = m >> (child_shift + 3);
      if (p != parent) {
        if (byte) out.push_back(byte);
        byte = 0;
        parent = p;
      }
      byte |= static_cast<uint8_t>(1u << ((m >> child_shift) & 7u));
    }
    if (byte) out.push_back(byte);
  }
  return out;
}

/// Octree coordinate coder: occupancy bits coded with one adaptive binary
/// context per child position. The last bit of a byte is implied when the
/// preceding seven are zero. Header: min_v = 0, max_v = depth, count = points.
inline std::vector<uint8_t> octree_encode(const CoordSet& coords, int depth) {
  const auto bytes = octree_occupancy_bytes(coords, depth);
  ByteWriter w;
  StreamHeader h{0, depth, static_cast<uint32_t>(coords.size())};
  h.write(w);
  if (coords.empty()) return w.take();
  RangeEncoder enc;
  std::array<AdaptiveBit, 8> ctx;
  for (uint8_t b : bytes) {
    for (int i = 0; i < 8; ++i) {
      const int bit = (b >> i) & 1;
      if (i == 7 && (b & 0x7F) == 0) break;
      enc.encode_bit(bit, ctx[i].f0());
      ctx[i].update(bit);
    }
  }
  w.bytes(enc.finish());
  return w.take();
}

inline CoordSet octree_decode(std::span<const uint8_t> payload, int depth, int32_t stride = 1) {
  ByteReader rd(payload);
  const StreamHeader h = StreamHeader::read(rd);
  if (h.min_v != 0 || h.max_v != depth) throw FormatError("octree stream: depth mismatch");
  if (depth < 0 || depth > kMaxOctreeDepth) throw FormatError("octree stream: depth out of range");
  if (h.count == 0) return CoordSet({}, stride);
  RangeDecoder dec(payload.subspan(rd.position()));
  std::array<AdaptiveBit, 8> ctx;
  std::vector<uint64_t> nodes{0}, next;
  for (int level = 0; level < depth; ++level) {
    next.clear();
    for (uint64_t p : nodes) {
      int seen = 0;
      for (int i = 0; i < 8; ++i) {
        int bit;
        if (i == 7 && seen == 0) {
          bit = 1;
        } else {
          bit = dec.decode_bit(ctx[i].f0());
          ctx[i].update(bit);
        }
        if (bit) {
          ++seen;
          next.push_back((p << 3) | static_cast<uint64_t>(i));
        }
      }
      if (next.size() > h.count) throw FormatError("octree stream: more nodes than points");
    }
    nodes.swap(next);
  }
  if (nodes.size() != h.count) throw FormatError("octree stream: point count mismatch");
  if (dec.overread()) throw FormatError("octree stream: truncated");
  std::vector<Coord> pts;
  pts.reserve(nodes.size());
  for (uint64_t m : nodes) pts.push_back(detail::unmorton(m, depth) * stride);
  return CoordSet(std::move(pts), stride);
}

}  // namespace hbm::entropy
