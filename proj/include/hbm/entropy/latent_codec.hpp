#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "hbm/entropy/factorized.hpp"

namespace hbm::entropy {

/// Widest per-channel table; symbols outside escape to raw 32-bit values.
inline constexpr int32_t kTableLo = -2048;
inline constexpr int32_t kTableHi = 2047;

/// Stream micro-header preceding coder bytes: min_v i32, max_v i32, count u32.
struct StreamHeader {
  int32_t min_v = 0;
  int32_t max_v = 0;
  uint32_t count = 0;
  static constexpr size_t kSize = 12;

  void write(ByteWriter& w) const {
    w.i32(min_v);
    w.i32(max_v);
    w.u32(count);
  }
  static StreamHeader read(ByteReader& r) {
    StreamHeader h;
    h.min_v = r.i32();
    h.max_v = r.i32();
    h.count = r.u32();
    return h;
  }
};

/// Coding window derived from the header only, so both sides agree.
inline std::pair<int32_t, int32_t> table_window(int32_t min_v, int32_t max_v) {
  int32_t lo = std::max(min_v, kTableLo), hi = std::min(max_v, kTableHi);
  if (lo > hi) lo = hi = std::clamp(0, min_v, max_v);
  return {lo, hi};
}

/// Per-channel CDF tables of a factorized model over a header window.
inline std::vector<CdfTable> channel_tables(const FactorizedModel& m, int32_t min_v, int32_t max_v) {
  auto [lo, hi] = table_window(min_v, max_v);
  std::vector<CdfTable> t;
  t.reserve(static_cast<size_t>(m.channels()));
  for (int c = 0; c < m.channels(); ++c) t.push_back(m.table(c, lo, hi));
  return t;
}

/// Codes an integer-valued N x C matrix row-major, channel c with its own table.
inline std::vector<uint8_t> encode_latent(const Matrix& q, const FactorizedModel& m) {
  if (q.cols() != m.channels() && q.size() != 0) throw std::invalid_argument("encode_latent: channel mismatch");
  StreamHeader h;
  h.count = static_cast<uint32_t>(q.size());
  if (q.size()) {
    h.min_v = static_cast<int32_t>(q.minCoeff());
    h.max_v = static_cast<int32_t>(q.maxCoeff());
  }
  ByteWriter w;
  h.write(w);
  if (h.count == 0) return w.take();
  const auto tables = channel_tables(m, h.min_v, h.max_v);
  RangeEncoder enc;
  for (Eigen::Index r = 0; r < q.rows(); ++r)
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      const double v = q(r, c);
      if (v != std::round(v)) throw std::invalid_argument("encode_latent: non-integer symbol");
      encode_symbol(enc, tables[c], static_cast<int32_t>(v));
    }
  w.bytes(enc.finish());
  return w.take();
}

inline Matrix decode_latent(std::span<const uint8_t> bytes, const FactorizedModel& m, size_t rows) {
  ByteReader rd(bytes);
  const StreamHeader h = StreamHeader::read(rd);
  const uint64_t want = static_cast<uint64_t>(rows) * static_cast<uint64_t>(m.channels());
  if (h.count != want) throw FormatError("latent stream: symbol count does not match the coordinate set");
  Matrix q(static_cast<Eigen::Index>(rows), m.channels());
  if (want == 0) return q;
  if (h.min_v > h.max_v) throw FormatError("latent stream: min > max");
  const auto tables = channel_tables(m, h.min_v, h.max_v);
  RangeDecoder dec(bytes.subspan(rd.position()));
  for (Eigen::Index r = 0; r < q.rows(); ++r)
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      const int32_t v = decode_symbol(dec, tables[c]);
      if (v < h.min_v || v > h.max_v) throw FormatError("latent stream: symbol outside declared range");
      q(r, c) = v;
    }
  if (dec.overread()) throw FormatError("latent stream: truncated");
  return q;
}

}  // namespace hbm::entropy
