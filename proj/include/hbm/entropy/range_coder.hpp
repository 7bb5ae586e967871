#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbm/core/bytes.hpp"

namespace hbm::entropy {

/// Every frequency table sums to 2^16.
inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbTotal = 1u << kProbBits;

/// Carry-propagating range encoder: 33-bit low in a 64-bit register, 32-bit
/// range renormalised below 2^24, pending 0xFF run tracked by a byte cache.
class RangeEncoder {
 public:
  /// Codes the interval [cum, cum + freq) out of 2^16.
  void encode(uint32_t cum, uint32_t freq) {
    if (freq == 0 || cum + freq > kProbTotal) throw std::logic_error("range coder: empty or overflowing interval");
    const uint32_t r = range_ >> kProbBits;
    low_ += static_cast<uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < (1u << 24)) {
      range_ <<= 8;
      shift_low();
    }
    ++symbols_;
  }

  /// Binary symbol with P(bit = 0) = f0 / 2^16, 0 < f0 < 2^16.
  void encode_bit(int bit, uint32_t f0) { bit ? encode(f0, kProbTotal - f0) : encode(0, f0); }

  /// Uniform 16-bit chunk.
  void encode_raw16(uint32_t v) { encode(v & 0xFFFFu, 1); }

  void encode_raw32(uint32_t v) {
    encode_raw16(v >> 16);
    encode_raw16(v & 0xFFFFu);
  }

  /// Flushes the state. An encoder that saw no symbols produces no bytes.
  std::vector<uint8_t> finish() {
    if (symbols_ > 0)
      for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
      uint8_t temp = cache_;
      do {
        out_.push_back(static_cast<uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  uint64_t symbols_ = 0;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes) : in_(bytes) {
    if (in_.empty()) return;
    if (in_.size() < 5) throw FormatError("range coder: stream shorter than its flush");
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  /// Scaled target in [0, 2^16); the caller maps it to a symbol and then calls consume().
  uint32_t target() {
    r_ = range_ >> kProbBits;
    const uint32_t v = code_ / r_;
    if (v >= kProbTotal) throw FormatError("range coder: corrupt stream");
    return v;
  }

  void consume(uint32_t cum, uint32_t freq) {
    code_ -= r_ * cum;
    range_ = r_ * freq;
    while (range_ < (1u << 24)) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

  int decode_bit(uint32_t f0) {
    const uint32_t v = target();
    if (v < f0) {
      consume(0, f0);
      return 0;
    }
    consume(f0, kProbTotal - f0);
    return 1;
  }

  uint32_t decode_raw16() {
    const uint32_t v = target();
    consume(v, 1);
    return v;
  }

  uint32_t decode_raw32() {
    const uint32_t hi = decode_raw16();
    return (hi << 16) | decode_raw16();
  }

  /// Bytes past the end of the stream read as zero; overreads are counted so
  /// callers can reject streams that were cut short.
  size_t overread() const { return overread_; }

 private:
  uint32_t next() {
    if (pos_ < in_.size()) return in_[pos_++];
    ++overread_;
    return 0;
  }

  std::span<const uint8_t> in_;
  size_t pos_ = 0;
  size_t overread_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t r_ = 1;
};

/// Integer CDF over symbols [lo, hi] plus a trailing escape symbol.
/// cum.size() == symbol count + 2, cum.front() == 0, cum.back() == 2^16,
/// every symbol (escape included) has frequency >= 1.
struct CdfTable {
  int32_t lo = 0;
  int32_t hi = -1;
  std::vector<uint32_t> cum;

  size_t symbols() const { return static_cast<size_t>(hi - lo + 1); }
  size_t escape() const { return symbols(); }
  uint32_t freq(size_t s) const { return cum[s + 1] - cum[s]; }

  void validate() const {
    if (cum.size() != symbols() + 2 || cum.front() != 0 || cum.back() != kProbTotal)
      throw std::logic_error("cdf table: bad mass");
    for (size_t s = 0; s + 1 < cum.size(); ++s)
      if (cum[s + 1] <= cum[s]) throw std::logic_error("cdf table: zero-frequency symbol");
  }

  /// Symbol index s with cum[s] <= v < cum[s + 1].
  size_t lookup(uint32_t v) const {
    size_t a = 0, b = cum.size() - 1;
    while (b - a > 1) {
      const size_t m = (a + b) / 2;
      (cum[m] <= v ? a : b) = m;
    }
    return a;
  }
};

/// Quantises a probability vector (symbols then escape) to a CdfTable:
/// round(p * 2^16) floored at 1, then the residual mass is settled on the
/// largest entries.
inline CdfTable quantize_pmf(int32_t lo, const std::vector<double>& p) {
  if (p.size() < 2 || p.size() > kProbTotal) throw std::invalid_argument("quantize_pmf: bad alphabet size");
  std::vector<int64_t> f(p.size());
  int64_t total = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double v = p[i] > 0.0 ? p[i] : 0.0;
    f[i] = std::max<int64_t>(1, static_cast<int64_t>(v * kProbTotal + 0.5));
    total += f[i];
  }
  int64_t diff = static_cast<int64_t>(kProbTotal) - total;
  while (diff != 0) {
    size_t best = 0;
    for (size_t i = 1; i < f.size(); ++i)
      if (f[i] > f[best]) best = i;
    if (diff > 0) {
      f[best] += diff;
      diff = 0;
    } else {
      const int64_t take = std::min<int64_t>(-diff, f[best] - 1);
      if (take <= 0) throw std::logic_error("quantize_pmf: cannot settle mass");
      // Take at most half so mass is spread over the largest entries.
      const int64_t step = std::max<int64_t>(1, std::min(take, f[best] / 2));
      f[best] -= step;
      diff += step;
    }
  }
  CdfTable t;
  t.lo = lo;
  t.hi = lo + static_cast<int32_t>(p.size()) - 2;
  t.cum.assign(p.size() + 1, 0);
  for (size_t i = 0; i < f.size(); ++i) t.cum[i + 1] = t.cum[i] + static_cast<uint32_t>(f[i]);
  t.validate();
  return t;
}

/// Codes v with table t, escaping to a raw 32-bit value when out of range.
inline void encode_symbol(RangeEncoder& enc, const CdfTable& t, int32_t v) {
  if (v >= t.lo && v <= t.hi) {
    const size_t s = static_cast<size_t>(v - t.lo);
    enc.encode(t.cum[s], t.freq(s));
    return;
  }
  const size_t e = t.escape();
  enc.encode(t.cum[e], t.freq(e));
  enc.encode_raw32(static_cast<uint32_t>(v));
}

inline int32_t decode_symbol(RangeDecoder& dec, const CdfTable& t) {
  const size_t s = t.lookup(dec.target());
  dec.consume(t.cum[s], t.freq(s));
  if (s == t.escape()) return static_cast<int32_t>(dec.decode_raw32());
  return t.lo + static_cast<int32_t>(s);
}

/// Adaptive binary model: P(0) = (n0 + 1) / (n0 + n1 + 2) in 16-bit
/// fixed point; counts halve once their sum reaches 2^13.
class AdaptiveBit {
 public:
  uint32_t f0() const {
    const uint64_t f = ((static_cast<uint64_t>(n0_) + 1) << kProbBits) / (n0_ + n1_ + 2);
    return static_cast<uint32_t>(std::clamp<uint64_t>(f, 1, kProbTotal - 1));
  }
  void update(int bit) {
    (bit ? n1_ : n0_) += 1;
    if (n0_ + n1_ >= (1u << 13)) {
      n0_ = (n0_ + 1) / 2;
      n1_ = (n1_ + 1) / 2;
    }
  }

 private:
  uint32_t n0_ = 0, n1_ = 0;
};

}  // namespace hbm::entropy
