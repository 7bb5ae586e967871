#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hbm/entropy/latent_codec.hpp"
#include "hbm/nn/blocks.hpp"

namespace hbm::entropy {

/// 16-bit frequency of an occupied bit: clamp(round(p 2^16), 1, 2^16 - 1).
/// The effective probability floor is therefore 2^-16.
inline uint32_t occupied_frequency(double p) {
  const double f = std::round(p * kProbTotal);
  return static_cast<uint32_t>(std::clamp(f, 1.0, static_cast<double>(kProbTotal - 1)));
}

inline double stable_sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

/// Mask stream: header {0, 1, count} then one binary symbol per candidate.
inline std::vector<uint8_t> encode_mask(const std::vector<uint8_t>& bits, const Matrix& logits) {
  if (static_cast<size_t>(logits.rows()) != bits.size()) throw std::invalid_argument("encode_mask: size mismatch");
  ByteWriter w;
  StreamHeader{0, 1, static_cast<uint32_t>(bits.size())}.write(w);
  RangeEncoder enc;
  for (size_t i = 0; i < bits.size(); ++i)
    enc.encode_bit(bits[i], kProbTotal - occupied_frequency(stable_sigmoid(logits(i, 0))));
  w.bytes(enc.finish());
  return w.take();
}

inline std::vector<uint8_t> decode_mask(std::span<const uint8_t> payload, const Matrix& logits) {
  ByteReader rd(payload);
  const StreamHeader h = StreamHeader::read(rd);
  if (h.min_v != 0 || h.max_v != 1 || h.count != static_cast<uint64_t>(logits.rows()))
    throw FormatError("mask stream: header does not match the candidate set");
  RangeDecoder dec(payload.subspan(rd.position()));
  std::vector<uint8_t> bits(h.count);
  for (size_t i = 0; i < bits.size(); ++i)
    bits[i] = static_cast<uint8_t>(dec.decode_bit(kProbTotal - occupied_frequency(stable_sigmoid(logits(i, 0)))));
  if (dec.overread()) throw FormatError("mask stream: truncated");
  return bits;
}

/// 1 where a candidate belongs to `fine`, as an N x 1 column.
inline Matrix occupancy_labels(const CoordSet& cand, const CoordSet& fine) {
  Matrix y(static_cast<Eigen::Index>(cand.size()), 1);
  for (size_t i = 0; i < cand.size(); ++i) y(i, 0) = fine.contains(cand[i]) ? 1.0 : 0.0;
  return y;
}

struct OccupancyTrain {
  ad::Var latent_bits;  ///< Rate of the noisy latent.
  ad::Var mask_bits;    ///< Sum of BCE / ln 2 over the candidates.
};

struct OccupancyPayload {
  std::vector<uint8_t> latent;
  std::vector<uint8_t> mask;
  double latent_estimate = 0.0;  ///< Bits under the factorized model.
  double mask_estimate = 0.0;    ///< Sum of BCE / ln 2 under the unclamped probabilities.
};

/// Lossless C(y3) -> C(y2) refinement. Analysis: an all-one occupancy tensor
/// on C(y2) goes through a downsample block and a conv to a small latent on
/// C(y3). Synthesis: an upsample block over the children of C(y3) predicts
/// occupancy probabilities that drive the arithmetic-coded mask.
class OccupancyRefiner {
 public:
  OccupancyRefiner() = default;
  OccupancyRefiner(ad::ParameterStore& store, const std::string& name, int hidden, int latent, Rng& rng) {
    down_ = nn::DownsampleBlock(store, name + ".down", 1, hidden, hidden, rng);
    to_latent_ = nn::SparseConv(store, name + ".latent", {hidden, latent, 3}, rng);
    prior_ = FactorizedModel(store, name + ".prior", latent);
    up_ = nn::UpsampleBlock(store, name + ".up", latent, hidden, hidden, rng, true);
  }

  const FactorizedModel& prior() const { return prior_; }

  OccupancyTrain train(nn::Ctx& ctx, const CoordSetPtr& fine, Rng& rng) const {
    nn::SparseVar z = analysis(ctx, fine);
    ad::Var noisy = quantize_train(z.feats, rng);
    OccupancyTrain out;
    out.latent_bits = prior_.bits(ctx.tape, noisy);
    auto cand = up_.candidates({z.coords, noisy});
    nn::SparseVar logits = up_.classify(ctx, up_.features(ctx, {z.coords, noisy}, cand));
    out.mask_bits = ad::scale(ad::bce_with_logits(logits.feats, labels(*cand, *fine)), 1.0 / std::log(2.0));
    return out;
  }

  /// `coarse` must equal downsample(fine); it is what the decoder already holds.
  OccupancyPayload encode(nn::Ctx& ctx, const CoordSetPtr& coarse, const CoordSetPtr& fine) const {
    nn::SparseVar z = analysis(ctx, fine);
    if (!(*z.coords == *coarse)) throw std::invalid_argument("occupancy refiner: coarse set is not the parent set");
    Matrix q = quantize_infer(z.feats.value());
    OccupancyPayload p;
    p.latent = encode_latent(q, prior_);
    p.latent_estimate = bits_from_likelihoods(likelihoods(q));
    auto [cand, logits] = synthesize(ctx, coarse, q);
    Matrix y = labels(*cand, *fine);
    if (y.sum() != static_cast<double>(fine->size()))
      throw std::invalid_argument("occupancy refiner: fine set is not within the candidates");
    std::vector<uint8_t> bits(static_cast<size_t>(y.rows()));
    for (size_t i = 0; i < bits.size(); ++i) bits[i] = y(i, 0) > 0.5;
    p.mask = encode_mask(bits, logits);
    ad::Tape t(false);
    p.mask_estimate = ad::bce_with_logits(t.constant(logits), y).value()(0, 0) / std::log(2.0);
    return p;
  }

  CoordSetPtr decode(nn::Ctx& ctx, const CoordSetPtr& coarse, std::span<const uint8_t> latent,
                     std::span<const uint8_t> mask) const {
    Matrix q = decode_latent(latent, prior_, coarse->size());
    auto [cand, logits] = synthesize(ctx, coarse, q);
    const auto bits = decode_mask(mask, logits);
    std::vector<Coord> kept;
    for (size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) kept.push_back((*cand)[i]);
    return make_coords(std::move(kept), cand->stride());
  }

 private:
  nn::SparseVar analysis(nn::Ctx& ctx, const CoordSetPtr& fine) const {
    nn::SparseVar ones{fine, ctx.tape.constant(Matrix::Ones(static_cast<Eigen::Index>(fine->size()), 1))};
    return to_latent_(ctx, down_(ctx, ones));
  }

  std::pair<CoordSetPtr, Matrix> synthesize(nn::Ctx& ctx, const CoordSetPtr& coarse, const Matrix& q) const {
    nn::SparseVar zq{coarse, ctx.tape.constant(q)};
    auto cand = up_.candidates(zq);
    return {cand, up_.classify(ctx, up_.features(ctx, zq, cand)).feats.value()};
  }

  Matrix likelihoods(const Matrix& q) const {
    Matrix p(q.rows(), q.cols());
    for (Eigen::Index c = 0; c < q.cols(); ++c)
      for (Eigen::Index r = 0; r < q.rows(); ++r) p(r, c) = prior_.pmf(static_cast<int>(c), q(r, c));
    return p;
  }

  static Matrix labels(const CoordSet& cand, const CoordSet& fine) { return occupancy_labels(cand, fine); }

  nn::DownsampleBlock down_;
  nn::SparseConv to_latent_;
  FactorizedModel prior_;
  nn::UpsampleBlock up_;
};

}  // namespace hbm::entropy
