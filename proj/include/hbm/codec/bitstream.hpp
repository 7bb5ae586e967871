#pragma once

#include <zlib.h>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hbm/core/bytes.hpp"

namespace hbm::codec {

enum class FrameType : uint8_t { Intra = 0, Inter = 1 };

/// Sub-stream identifiers, in container order.
enum class StreamId : uint8_t { Coords3 = 0, OccLatent = 1, OccMask = 2, FlowLow = 3, FlowHigh = 4, Residual = 5 };
inline constexpr int kStreamCount = 6;

inline const char* stream_name(StreamId id) {
  static constexpr std::array<const char*, kStreamCount> names{"COORDS3", "OCC_LATENT", "OCC_MASK",
                                                               "FLOW_LOW", "FLOW_HIGH", "RESIDUAL"};
  return names[static_cast<size_t>(id)];
}

inline uint32_t crc32(std::span<const uint8_t> data) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  size_t pos = 0;
  while (pos < data.size()) {
    const uInt n = static_cast<uInt>(std::min<size_t>(data.size() - pos, 1u << 30));
    c = ::crc32(c, data.data() + pos, n);
    pos += n;
  }
  return static_cast<uint32_t>(c);
}

/// One coded frame. Layout: type u8 | N_full u32 | N_half u32 | N_y2 u32 |
/// stream count u8 | per stream: id u8, length u32, bytes | CRC32 u32 over
/// everything before it.
struct FrameBitstream {
  FrameType type = FrameType::Intra;
  uint32_t n_full = 0, n_half = 0, n_y2 = 0;
  std::array<std::optional<std::vector<uint8_t>>, kStreamCount> streams;

  bool has(StreamId id) const { return streams[static_cast<size_t>(id)].has_value(); }
  const std::vector<uint8_t>& stream(StreamId id) const {
    const auto& s = streams[static_cast<size_t>(id)];
    if (!s) throw FormatError(std::string("frame is missing stream ") + stream_name(id));
    return *s;
  }
  void set(StreamId id, std::vector<uint8_t> bytes) { streams[static_cast<size_t>(id)] = std::move(bytes); }
  size_t stream_bits(StreamId id) const { return has(id) ? 8 * stream(id).size() : 0; }

  std::vector<uint8_t> serialize() const {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(type));
    w.u32(n_full);
    w.u32(n_half);
    w.u32(n_y2);
    uint8_t count = 0;
    for (const auto& s : streams) count += s.has_value();
    w.u8(count);
    for (int i = 0; i < kStreamCount; ++i) {
      if (!streams[i]) continue;
      w.u8(static_cast<uint8_t>(i));
      w.u32(static_cast<uint32_t>(streams[i]->size()));
      w.bytes(*streams[i]);
    }
    auto out = w.take();
    const uint32_t crc = crc32(out);
    ByteWriter tail;
    tail.u32(crc);
    auto t = tail.take();
    out.insert(out.end(), t.begin(), t.end());
    return out;
  }

  /// Parses one frame from the front of `r`; the CRC is checked before any
  /// field is trusted.
  static FrameBitstream parse(ByteReader& r, std::span<const uint8_t> whole) {
    const size_t start = r.position();
    FrameBitstream f;
    const uint8_t type = r.u8();
    f.n_full = r.u32();
    f.n_half = r.u32();
    f.n_y2 = r.u32();
    const uint8_t count = r.u8();
    if (count > kStreamCount) throw FormatError("frame: too many streams");
    std::vector<std::pair<uint8_t, std::span<const uint8_t>>> raw;
    for (uint8_t i = 0; i < count; ++i) {
      const uint8_t id = r.u8();
      const uint32_t len = r.u32();
      raw.push_back({id, r.bytes(len)});
    }
    const size_t end = r.position();
    const uint32_t crc = r.u32();
    if (crc != crc32(whole.subspan(start, end - start))) throw FormatError("frame: CRC mismatch");
    if (type > 1) throw FormatError("frame: unknown type");
    f.type = static_cast<FrameType>(type);
    for (const auto& [id, bytes] : raw) {
      if (id >= kStreamCount) throw FormatError("frame: unknown stream id");
      if (f.streams[id]) throw FormatError("frame: duplicate stream");
      f.streams[id] = std::vector<uint8_t>(bytes.begin(), bytes.end());
    }
    return f;
  }

  static FrameBitstream parse(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    FrameBitstream f = parse(r, bytes);
    if (!r.at_end()) throw FormatError("frame: trailing bytes");
    return f;
  }

  bool operator==(const FrameBitstream&) const = default;
};

inline constexpr std::array<uint8_t, 4> kSequenceMagic{'H', 'B', 'M', 'X'};
inline constexpr uint8_t kSequenceVersion = 1;

/// "HBMX" | version u8 | bit depth u8 | frame count u32 | model hash u64 | frames.
struct SequenceBitstream {
  uint8_t bit_depth = 10;
  uint64_t model_hash = 0;
  std::vector<FrameBitstream> frames;

  std::vector<uint8_t> serialize() const {
    ByteWriter w;
    for (uint8_t c : kSequenceMagic) w.u8(c);
    w.u8(kSequenceVersion);
    w.u8(bit_depth);
    w.u32(static_cast<uint32_t>(frames.size()));
    w.u64(model_hash);
    for (const auto& f : frames) w.bytes(f.serialize());
    return w.take();
  }

  static SequenceBitstream parse(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    for (uint8_t c : kSequenceMagic)
      if (r.u8() != c) throw FormatError("not an HBMX stream (bad magic)");
    const uint8_t version = r.u8();
    if (version != kSequenceVersion) throw FormatError("unsupported HBMX version " + std::to_string(version));
    SequenceBitstream s;
    s.bit_depth = r.u8();
    if (s.bit_depth < 4 || s.bit_depth > 21) throw FormatError("HBMX: bit depth out of range");
    const uint32_t n = r.u32();
    s.model_hash = r.u64();
    for (uint32_t i = 0; i < n; ++i) s.frames.push_back(FrameBitstream::parse(r, bytes));
    if (!r.at_end()) throw FormatError("HBMX: trailing bytes");
    return s;
  }
};

}  // namespace hbm::codec
