#pragma once

#include <string>
#include <vector>

#include "hbm/autodiff/parameter.hpp"
#include "hbm/core/bytes.hpp"

namespace hbm::ad {

inline constexpr char kWeightMagic[4] = {'H', 'W', 'T', 'S'};
inline constexpr uint8_t kWeightVersion = 1;

/// One named tensor as stored in a weight file.
struct WeightRecord {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

/// "HWTS" | version u8 | count u32 | per record: name_len u16, name, rank u8,
/// dims u32[rank], float32[prod(dims)] row-major. All little-endian.
inline std::vector<uint8_t> serialize_weights(const std::vector<WeightRecord>& records) {
  ByteWriter w;
  for (char c : kWeightMagic) w.u8(static_cast<uint8_t>(c));
  w.u8(kWeightVersion);
  w.u32(static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long");
    w.u16(static_cast<uint16_t>(r.name.size()));
    w.str(r.name);
    w.u8(static_cast<uint8_t>(r.dims.size()));
    size_t n = 1;
    for (uint32_t d : r.dims) {
      w.u32(d);
      n *= d;
    }
    if (n != r.data.size()) throw std::invalid_argument("weight record size mismatch: " + r.name);
    for (float f : r.data) w.f32(f);
  }
  return w.take();
}

inline std::vector<WeightRecord> parse_weights(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  for (char c : kWeightMagic)
    if (r.u8() != static_cast<uint8_t>(c)) throw FormatError("not a weight file (bad magic)");
  const uint8_t version = r.u8();
  if (version != kWeightVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
  const uint32_t count = r.u32();
  std::vector<WeightRecord> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    WeightRecord rec;
    rec.name = r.str(r.u16());
    const uint8_t rank = r.u8();
    size_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      rec.dims.push_back(r.u32());
      n *= rec.dims.back();
    }
    if (n > r.remaining() / 4) throw FormatError("weight record exceeds file: " + rec.name);
    rec.data.resize(n);
    for (size_t k = 0; k < n; ++k) rec.data[k] = r.f32();
    out.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in weight file");
  return out;
}

inline WeightRecord to_record(const Parameter& p) {
  WeightRecord rec{p.name, p.dims, {}};
  rec.data.resize(static_cast<size_t>(p.value.size()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) rec.data[i] = static_cast<float>(p.value.data()[i]);
  return rec;
}

/// Copies a record into a parameter of matching name and shape.
inline void assign_record(Parameter& p, const WeightRecord& rec) {
  if (rec.dims != p.dims) throw FormatError("shape mismatch for parameter " + p.name);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rec.data[i];
}

/// Rounds every parameter to float32 so in-memory values equal stored ones.
inline void round_to_storage_precision(ParameterStore& store) {
  for (size_t i = 0; i < store.size(); ++i) {
    Matrix& v = store[i].value;
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<double>(static_cast<float>(v.data()[k]));
  }
}

}  // namespace hbm::ad
