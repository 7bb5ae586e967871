#pragma once

#include <array>
#include <memory>
#include <stdexcept>
#include <vector>

#include "hbm/core/coord.hpp"

namespace hbm::nn {

/// Kernel offsets in fixed lexicographic (z, y, x) order. Odd sizes are
/// centred ({-1,0,1} for 3); size 2 spans {0,1}.
inline std::vector<Coord> kernel_offsets(int kernel_size) {
  if (kernel_size < 1) throw std::invalid_argument("kernel size must be >= 1");
  const int lo = -(kernel_size - 1) / 2;
  const int hi = lo + kernel_size - 1;
  std::vector<Coord> offs;
  for (int z = lo; z <= hi; ++z)
    for (int y = lo; y <= hi; ++y)
      for (int x = lo; x <= hi; ++x) offs.push_back({x, y, z});
  return offs;
}

/// For each kernel offset, the (input row, output row) pairs it connects.
struct KernelMap {
  int volume = 0;
  bool identity = false;  ///< 1^3 kernel, same coordinates: out row i <- in row i.
  std::vector<std::vector<int32_t>> in_rows;
  std::vector<std::vector<int32_t>> out_rows;
  size_t in_count = 0;
  size_t out_count = 0;
};
using KernelMapPtr = std::shared_ptr<const KernelMap>;

/// Appends every (row of in, row of out) with in[i] == out[o] + step, in
/// ascending o. Both sets are sorted and translation keeps the order, so one
/// linear walk suffices.
inline void match_shifted(const CoordSet& in, const CoordSet& out, const Coord& step, std::vector<int32_t>& in_rows,
                          std::vector<int32_t>& out_rows) {
  const CanonicalLess less;
  size_t i = 0;
  for (size_t o = 0; o < out.size() && i < in.size(); ++o) {
    const Coord want = out[o] + step;
    while (i < in.size() && less(in[i], want)) ++i;
    if (i < in.size() && in[i] == want) {
      in_rows.push_back(static_cast<int32_t>(i));
      out_rows.push_back(static_cast<int32_t>(o));
    }
  }
}

/// Forward convolution: out(o) = sum_k W_k in(o + k * in.stride).
inline KernelMapPtr conv_kernel_map(const CoordSet& in, const CoordSet& out, int kernel_size) {
  auto m = std::make_shared<KernelMap>();
  m->in_count = in.size();
  m->out_count = out.size();
  if (kernel_size == 1 && &in == &out) {
    m->volume = 1;
    m->identity = true;
    return m;
  }
  const auto offs = kernel_offsets(kernel_size);
  m->volume = static_cast<int>(offs.size());
  m->in_rows.resize(offs.size());
  m->out_rows.resize(offs.size());
  const int32_t s = in.stride();
  for (size_t k = 0; k < offs.size(); ++k) {
    match_shifted(in, out, offs[k] * s, m->in_rows[k], m->out_rows[k]);
  }
  return m;
}

/// Transpose convolution: out(c) = sum_k W_k in(c - k * out.stride).
inline KernelMapPtr transpose_kernel_map(const CoordSet& in, const CoordSet& out, int kernel_size) {
  auto m = std::make_shared<KernelMap>();
  m->in_count = in.size();
  m->out_count = out.size();
  const auto offs = kernel_offsets(kernel_size);
  m->volume = static_cast<int>(offs.size());
  m->in_rows.resize(offs.size());
  m->out_rows.resize(offs.size());
  const int32_t s = out.stride();
  for (size_t k = 0; k < offs.size(); ++k) {
    // Misaligned sources never equal an input coordinate, so no stride test is needed.
    match_shifted(in, out, Coord{0, 0, 0} - offs[k] * s, m->in_rows[k], m->out_rows[k]);
  }
  return m;
}

/// Every child c = u + k * out_stride reachable from the input by a transpose kernel.
inline CoordSet generative_children(const CoordSet& in, int32_t out_stride, int kernel_size) {
  const auto offs = kernel_offsets(kernel_size);
  std::vector<Coord> kids;
  kids.reserve(in.size() * offs.size());
  for (const auto& u : in)
    for (const auto& k : offs) kids.push_back(u + k * out_stride);
  return CoordSet(std::move(kids), out_stride);
}

}  // namespace hbm::nn
