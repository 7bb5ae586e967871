#pragma once

#include <optional>
#include <vector>

#include "hbm/codec/bitstream.hpp"
#include "hbm/codec/model.hpp"
#include "hbm/entropy/octree.hpp"

namespace hbm::codec {

struct Latents {
  nn::SparseVar y2;  ///< Stride 4.
  nn::SparseVar y3;  ///< Stride 8.
};

/// conv0 -> ReLU -> Down1 -> Down2 (y2) -> Down3 (y3) on the all-one occupancy tensor.
inline Latents extract(nn::Ctx& ctx, const CodecModel& m, const CoordSetPtr& x) {
  if (!x || x->empty()) throw std::invalid_argument("feature extraction: empty point cloud");
  if (x->stride() != 1) throw std::invalid_argument("feature extraction: input must be at stride 1");
  nn::SparseVar ones{x, ctx.tape.constant(Matrix::Ones(static_cast<Eigen::Index>(x->size()), 1))};
  nn::SparseVar h = nn::relu(m.conv0(ctx, ones));
  Latents l;
  l.y2 = m.down2(ctx, m.down1(ctx, h));
  l.y3 = m.down3(ctx, l.y2);
  return l;
}

/// Residual analysis: Down block + conv to the residual latent on C(y3).
inline nn::SparseVar residual_analysis(nn::Ctx& ctx, const CodecModel& m, const nn::SparseVar& r) {
  return m.res_latent(ctx, m.res_down(ctx, r));
}

/// Residual synthesis targeted at C(y2).
inline nn::SparseVar residual_synthesis(nn::Ctx& ctx, const CodecModel& m, const nn::SparseVar& z,
                                        const CoordSetPtr& c2) {
  return m.res_up.features(ctx, z, c2);
}

/// Two generative upsample stages with top-k pruning to the header counts.
inline CoordSetPtr reconstruct(nn::Ctx& ctx, const CodecModel& m, const nn::SparseVar& y, uint32_t n_half,
                               uint32_t n_full) {
  nn::UpsampleResult a = m.up1(ctx, y, n_half);
  if (a.keep_clamped) throw FormatError("reconstruction: N_half exceeds the candidate count");
  nn::UpsampleResult b = m.up2(ctx, a.features, n_full);
  if (b.keep_clamped) throw FormatError("reconstruction: N_full exceeds the candidate count");
  return b.features.coords;
}

/// Decoder-visible intermediates, exposed so tests can compare both sides.
struct FrameTrace {
  CoordSetPtr c3, c2;
  Matrix y_ini, y_final, y_prime;
  Matrix flow_low, flow_high;  ///< N_y2 x 3C motion fields (inter frames).
};

struct FrameResult {
  FrameBitstream bits;
  CoordSetPtr recon;
  FrameTrace trace;
  double occ_latent_estimate = 0.0, occ_mask_estimate = 0.0;
  double flow_low_estimate = 0.0, flow_high_estimate = 0.0, residual_estimate = 0.0;
};

namespace detail {

inline void check_depth(int depth) {
  if (depth < 4 || depth > 21) throw std::invalid_argument("bit depth must lie in [4, 21]");
}

/// Inter prediction on the decoder side or the encoder side. Returns y_final.
struct InterOutcome {
  nn::SparseVar y_final;
  std::vector<uint8_t> low_payload, high_payload;
  double low_estimate = 0.0, high_estimate = 0.0;
  Matrix y_ini, flow_low, flow_high;
};

inline InterOutcome inter_encode(nn::Ctx& ctx, const CodecModel& m, const Latents& cur, const Latents& ref,
                                 const CoordSetPtr& c3, const CoordSetPtr& c2) {
  InterOutcome o;
  nn::SparseVar y3{c3, cur.y3.feats}, y2{c2, cur.y2.feats};
  inter::StageResult low = m.low.encode(ctx, ref.y3, y3, ref.y2, {c3, c2}, m.unit(8), m.unit(4), nullptr);
  inter::StageResult high = m.high.encode(ctx, low.prediction, y2, low.prediction, {c2}, m.unit(4), m.unit(4), nullptr);
  o.y_final = high.prediction;
  o.low_payload = std::move(low.payload);
  o.high_payload = std::move(high.payload);
  o.low_estimate = low.bits.value()(0, 0);
  o.high_estimate = high.bits.value()(0, 0);
  o.y_ini = low.prediction.feats.value();
  o.flow_low = low.flow.flows.value();
  o.flow_high = high.flow.flows.value();
  return o;
}

inline InterOutcome inter_decode(nn::Ctx& ctx, const CodecModel& m, const FrameBitstream& f, const Latents& ref,
                                 const CoordSetPtr& c3, const CoordSetPtr& c2) {
  InterOutcome o;
  auto embed_low = make_coords(downsample(*c3));
  inter::StageResult low = m.low.decode(ctx, f.stream(StreamId::FlowLow), embed_low, ref.y2, {c3, c2}, m.unit(4));
  inter::StageResult high =
      m.high.decode(ctx, f.stream(StreamId::FlowHigh), c3, low.prediction, {c2}, m.unit(4));
  o.y_final = high.prediction;
  o.y_ini = low.prediction.feats.value();
  o.flow_low = low.flow.flows.value();
  o.flow_high = high.flow.flows.value();
  return o;
}

}  // namespace detail

/// Codes one frame. `prev` is the decoder-identical previous reconstruction;
/// null selects intra coding (zero prediction, no flow streams).
inline FrameResult encode_frame(const CodecModel& m, const CoordSetPtr& x, const CoordSetPtr& prev, int depth) {
  detail::check_depth(depth);
  ad::Tape tape(false);
  nn::Ctx ctx(tape);
  const Latents cur = extract(ctx, m, x);
  FrameResult res;
  FrameBitstream& f = res.bits;
  f.type = prev ? FrameType::Inter : FrameType::Intra;
  f.n_full = static_cast<uint32_t>(x->size());
  f.n_half = static_cast<uint32_t>(downsample(*x).size());
  f.n_y2 = static_cast<uint32_t>(cur.y2.size());

  // Lossless coordinate chain: C(y3) by octree, C(y2) by occupancy refinement.
  f.set(StreamId::Coords3, entropy::octree_encode(*cur.y3.coords, depth - 3));
  entropy::OccupancyPayload occ = m.occupancy.encode(ctx, cur.y3.coords, cur.y2.coords);
  f.set(StreamId::OccLatent, std::move(occ.latent));
  f.set(StreamId::OccMask, std::move(occ.mask));
  res.occ_latent_estimate = occ.latent_estimate;
  res.occ_mask_estimate = occ.mask_estimate;
  const CoordSetPtr c3 = cur.y3.coords, c2 = cur.y2.coords;

  nn::SparseVar pred{c2, tape.constant(Matrix::Zero(static_cast<Eigen::Index>(c2->size()), m.config().y))};
  if (prev) {
    const Latents ref = extract(ctx, m, prev);
    detail::InterOutcome o = detail::inter_encode(ctx, m, cur, ref, c3, c2);
    pred = o.y_final;
    f.set(StreamId::FlowLow, std::move(o.low_payload));
    f.set(StreamId::FlowHigh, std::move(o.high_payload));
    res.flow_low_estimate = o.low_estimate;
    res.flow_high_estimate = o.high_estimate;
    res.trace.y_ini = std::move(o.y_ini);
    res.trace.flow_low = std::move(o.flow_low);
    res.trace.flow_high = std::move(o.flow_high);
  }

  nn::SparseVar r = nn::sub({c2, cur.y2.feats}, pred);
  nn::SparseVar z = residual_analysis(ctx, m, r);
  Matrix q = entropy::quantize_infer(z.feats.value());
  f.set(StreamId::Residual, entropy::encode_latent(q, m.res_prior));
  ad::Var qv = tape.constant(std::move(q));
  res.residual_estimate = m.res_prior.bits(tape, qv).value()(0, 0);
  nn::SparseVar y_prime = nn::add(pred, residual_synthesis(ctx, m, {c3, qv}, c2));

  res.recon = reconstruct(ctx, m, y_prime, f.n_half, f.n_full);
  res.trace.c3 = c3;
  res.trace.c2 = c2;
  res.trace.y_final = pred.feats.value();
  res.trace.y_prime = y_prime.feats.value();
  return res;
}

/// Decodes one frame from its payloads and the previous reconstruction only.
inline FrameResult decode_frame(const CodecModel& m, const FrameBitstream& f, const CoordSetPtr& prev, int depth) {
  detail::check_depth(depth);
  if (f.type == FrameType::Inter && !prev) throw FormatError("inter frame without a reference");
  ad::Tape tape(false);
  nn::Ctx ctx(tape);
  FrameResult res;
  res.bits = f;
  auto c3 = make_coords(entropy::octree_decode(f.stream(StreamId::Coords3), depth - 3, 8));
  if (c3->empty()) throw FormatError("frame: empty coordinate stream");
  CoordSetPtr c2 = m.occupancy.decode(ctx, c3, f.stream(StreamId::OccLatent), f.stream(StreamId::OccMask));
  if (c2->size() != f.n_y2) throw FormatError("frame: N_y2 does not match the decoded coordinate set");

  nn::SparseVar pred{c2, tape.constant(Matrix::Zero(static_cast<Eigen::Index>(c2->size()), m.config().y))};
  if (f.type == FrameType::Inter) {
    const Latents ref = extract(ctx, m, prev);
    detail::InterOutcome o = detail::inter_decode(ctx, m, f, ref, c3, c2);
    pred = o.y_final;
    res.trace.y_ini = std::move(o.y_ini);
    res.trace.flow_low = std::move(o.flow_low);
    res.trace.flow_high = std::move(o.flow_high);
  } else if (f.has(StreamId::FlowLow) || f.has(StreamId::FlowHigh)) {
    throw FormatError("intra frame carries flow streams");
  }
  Matrix q = entropy::decode_latent(f.stream(StreamId::Residual), m.res_prior, c3->size());
  nn::SparseVar y_prime = nn::add(pred, residual_synthesis(ctx, m, {c3, tape.constant(std::move(q))}, c2));
  res.recon = reconstruct(ctx, m, y_prime, f.n_half, f.n_full);
  res.trace.c3 = c3;
  res.trace.c2 = c2;
  res.trace.y_final = pred.feats.value();
  res.trace.y_prime = y_prime.feats.value();
  return res;
}

/// Per-frame rate breakdown in bits per input point.
struct FrameRate {
  double flow_low = 0, flow_high = 0, residual = 0, coords = 0;
  double total() const { return flow_low + flow_high + residual + coords; }
};

inline FrameRate frame_rate(const FrameBitstream& f) {
  const double n = f.n_full;
  FrameRate r;
  r.flow_low = f.stream_bits(StreamId::FlowLow) / n;
  r.flow_high = f.stream_bits(StreamId::FlowHigh) / n;
  r.residual = f.stream_bits(StreamId::Residual) / n;
  r.coords = (f.stream_bits(StreamId::Coords3) + f.stream_bits(StreamId::OccLatent) + f.stream_bits(StreamId::OccMask)) / n;
  return r;
}

struct SequenceResult {
  SequenceBitstream stream;
  std::vector<FrameResult> frames;
};

/// Frame i is intra when i % gop == 0, otherwise inter on the previous reconstruction.
inline SequenceResult encode_sequence(const CodecModel& m, const std::vector<CoordSetPtr>& frames, int gop, int depth) {
  if (gop < 1) throw std::invalid_argument("gop must be >= 1");
  SequenceResult out;
  out.stream.bit_depth = static_cast<uint8_t>(depth);
  out.stream.model_hash = m.hash();
  CoordSetPtr prev;
  for (size_t i = 0; i < frames.size(); ++i) {
    FrameResult r = encode_frame(m, frames[i], i % static_cast<size_t>(gop) == 0 ? nullptr : prev, depth);
    prev = r.recon;
    out.stream.frames.push_back(r.bits);
    out.frames.push_back(std::move(r));
  }
  return out;
}

/// Raised when a stream was produced by a different model.
class ModelMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<FrameResult> decode_sequence(const CodecModel& m, const SequenceBitstream& s) {
  if (s.model_hash != m.hash()) throw ModelMismatch("stream was encoded with a different model (hash mismatch)");
  std::vector<FrameResult> out;
  CoordSetPtr prev;
  for (const auto& f : s.frames) {
    out.push_back(decode_frame(m, f, f.type == FrameType::Inter ? prev : nullptr, s.bit_depth));
    prev = out.back().recon;
  }
  return out;
}

}  // namespace hbm::codec
